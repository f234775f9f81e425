import numpy as np
import pytest

from slim3d.errors import ConfigurationError, TrainingFailure
from slim3d.masks import MaskStrategy, parse_strategy
from slim3d.scene_gen import DEFAULT_TASK_RECIPE, build_task_set
from slim3d.train import TrainConfig, toy_train

SMALL = dict(n_train=128, n_eval=64, batch_size=16, eval_every=5)


def test_untrained_model_is_at_chance():
    cfg = TrainConfig(steps=0, n_train=8, n_eval=1200)
    accs = [toy_train(MaskStrategy("geo"), seed=s, config=cfg).accuracy for s in range(3)]
    chance = 1 / DEFAULT_TASK_RECIPE.n_objects
    # 3600 draws: sd of the mean is about 0.004
    assert abs(np.mean(accs) - chance) < 0.03


def test_same_seed_gives_identical_metrics():
    cfg = TrainConfig(steps=12, optimizer="adam", lr=3e-3, **SMALL)
    a = toy_train(parse_strategy("geo+inst"), seed=3, config=cfg)
    b = toy_train(parse_strategy("geo+inst"), seed=3, config=cfg)
    assert a.curve == b.curve and a.accuracy == b.accuracy and a.final_loss == b.final_loss


def test_plain_gradient_descent_lowers_the_loss():
    ts = build_task_set(DEFAULT_TASK_RECIPE, 64, seed=1)
    cfg = TrainConfig(steps=40, optimizer="sgd", lr=1e-2, batch_size=64, eval_every=0)
    first = toy_train(parse_strategy("full"), 0, TrainConfig(steps=1, optimizer="sgd", batch_size=64),
                      train_set=ts, eval_set=ts)
    later = toy_train(parse_strategy("full"), 0, cfg, train_set=ts, eval_set=ts)
    assert later.final_loss < first.final_loss


def test_curve_and_summary_formats():
    r = toy_train(MaskStrategy("diag"), seed=0, config=TrainConfig(steps=10, **SMALL))
    lines = r.curve_csv().splitlines()
    assert lines[0] == "step,loss,accuracy"
    assert [int(l.split(",")[0]) for l in lines[1:]] == [5, 10]
    assert r.summary().startswith("strategy=diag, seed=0, accuracy=")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_training_failure():
    cfg = TrainConfig(steps=30, optimizer="sgd", lr=1e200, grad_clip=0.0, **SMALL)
    with pytest.raises(TrainingFailure):
        toy_train(MaskStrategy("full"), seed=0, config=cfg)


@pytest.mark.parametrize("kwargs", [dict(n_layers=3), dict(n_heads=8), dict(d_model=128),
                                    dict(optimizer="rmsprop")])
def test_toy_scale_limits(kwargs):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwargs)
