"""Reordering the object tokens changes a causal decoder's answer but not a Geo+Inst one."""

import numpy as np

from slim3d import (DecoderConfig, DecoderParams, SequenceBatch, TokenLayout, compose, decoder_forward,
                    parse_strategy, segment_spans)
from slim3d.checks import random_scene


def response_logits(params, scene, ids, layout, spec):
    obj = segment_spans(layout).object_segment
    feats = np.zeros((layout.n, 3))
    feats[obj.start:obj.stop] = scene.centers
    out = decoder_forward(params, SequenceBatch(ids, layout, compose(scene, layout, parse_strategy(spec)), feats))
    return out[segment_spans(layout).response]


def main():
    rng = np.random.default_rng(0)
    N = 10
    layout = TokenLayout(n_system=1, n_objects=N, n_instruction=3, n_response=1)
    scene = random_scene(rng, N)
    ids = rng.integers(0, 40, size=layout.n)
    perm = rng.permutation(N)
    obj = segment_spans(layout).object_segment
    ids_p = ids.copy()
    ids_p[obj.start:obj.stop] = ids[obj.start:obj.stop][perm]
    for spec, positions in (("geo+inst", "shared"), ("causal", "per_token")):
        cfg = DecoderConfig(vocab_size=40, d_model=16, n_heads=2, d_head=8, n_layers=2, d_ff=32,
                            max_positions=layout.n, feature_dim=3, object_positions=positions)
        params = DecoderParams.init(cfg, seed=1)
        a = response_logits(params, scene, ids, layout, spec)
        b = response_logits(params, scene.permuted(perm), ids_p, layout, spec)
        print(f"{spec:9s} ({positions} positions): max response change {np.abs(a - b).max():.2e}")


if __name__ == "__main__":
    main()
