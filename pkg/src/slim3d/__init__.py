"""Geometry-adaptive and instruction-aware attention masks for object-centric decoders."""

from .attention import (SparsePattern, attention_weights, masked_attention, masked_softmax,
                        reachability, sparse_masked_attention)
from .decoder import (DecoderConfig, DecoderParams, GradCheckReport, SequenceBatch,
                      corrupt_gradient, decoder_forward, grad_check, nll_loss)
from .errors import (ConfigurationError, ContractViolation, DuplicateObjectError, GenerationError,
                     NonFiniteCoordinateError, SceneFormatError, SlimError, TrainingFailure,
                     VerificationFailure)
from .geo import (DensityProfile, GeoParams, adaptive_k, density_profile, geo_neighbors,
                  geo_object_mask, local_density, pairwise_distances, topk_neighbors)
from .masks import (AttentionMask, MaskStrategy, causal_mask, compose, load_mask, parse_mask,
                    parse_strategy, save_mask, sparsity_stats)
from .oracle import oracle_geo_mask, oracle_strategy_mask
from .scene import (Point3, SceneObjects, TokenLayout, load_layout, load_scene, parse_layout,
                    parse_scene, save_layout, save_scene, segment_spans)
from .scene_gen import SceneRecipe, generate_grounding_task, generate_scene
from .train import TrainConfig, toy_train

__version__ = "0.1.0"
