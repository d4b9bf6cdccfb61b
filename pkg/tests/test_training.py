import numpy as np
import pytest

from occrobnet import synthdata as sd
from occrobnet import tensor as T
from occrobnet.config import RunConfig
from occrobnet.errors import NonFiniteError
from occrobnet.model import OccRobNet, SceneTargets
from occrobnet.training import (Optimizer, check_finite, make_optimizer, schedule, schedule_hash,
                                schedule_index, train)

TINY = dict(channels=8, d_model=32, ffn_dim=32, enc_layers=1, dec_layers=1, warmup=10)


def test_schedule_is_a_permutation_per_pass():
    order = schedule(3, 24, 8)
    for k in range(3):
        assert sorted(order[8 * k:8 * k + 8]) == list(range(8))
    assert order == schedule(3, 24, 8)
    assert schedule_index(3, 13, 8) == order[13]


def test_schedule_hash_depends_on_inputs():
    h = schedule_hash(0, 50, 16)
    assert h == schedule_hash(0, 50, 16)
    assert h != schedule_hash(1, 50, 16) and h != schedule_hash(0, 51, 16)


def test_sgd_step_matches_formula():
    p = T.Parameter(np.array([1.0, -2.0]))
    p.grad = np.array([0.5, 0.5])
    Optimizer([p], "sgd", 0.1, clip_norm=None).step()
    assert np.allclose(p.data, [0.95, -2.05])


def test_adam_first_step_is_sign_times_step():
    p = T.Parameter(np.array([1.0, -2.0, 3.0]))
    p.grad = np.array([0.3, -7.0, 1e-3])
    Optimizer([p], "adam", 0.01, clip_norm=None).step()
    assert np.allclose(p.data, [0.99, -1.99, 2.99], atol=1e-7)


def test_clipping_limits_global_norm():
    p = T.Parameter(np.zeros(2))
    p.grad = np.array([30.0, 40.0])
    opt = Optimizer([p], "sgd", 1.0, clip_norm=10.0)
    assert opt.step() == pytest.approx(50.0)
    assert np.linalg.norm(p.data) == pytest.approx(10.0)


def test_transformer_groups_get_their_own_step():
    cfg = RunConfig(**TINY, step_size=1e-3, transformer_step_size=2e-4)
    model = OccRobNet(cfg)
    opt = make_optimizer(model, cfg)
    named = dict(zip((n for n, _ in model.named_parameters()), opt.multipliers))
    assert all(k == pytest.approx(0.2) for n, k in named.items() if n.startswith("transformer."))
    assert all(k == 1.0 for n, k in named.items() if n.startswith("backbone."))
    assert len(opt.params) == len(named) > 0


def test_non_finite_gradient_detected():
    cfg = RunConfig(**TINY)
    model = OccRobNet(cfg)
    scene = sd.generate_scene(0, sd.SceneConfig(True, 0.25))
    _, breakdown = model.loss(SceneTargets(scene, cfg.sigma), 0)
    name, p = next(iter(model.named_parameters()))
    p.grad = np.full_like(p.data, np.nan)
    with pytest.raises(NonFiniteError, match=name):
        check_finite(model, breakdown)


@pytest.mark.slow
def test_two_hundred_iterations_reduce_loss():
    cfg = RunConfig(**TINY, iterations=200)
    scenes = sd.generate_dataset(cfg.seed, 16, 0.25, 0.5)
    _, history = train(OccRobNet(cfg), scenes, cfg)
    totals = np.array([b.total for b in history])
    assert len(totals) == 200
    assert totals[-32:].mean() < 0.9 * totals[:32].mean()


def test_training_is_deterministic():
    cfg = RunConfig(**TINY, iterations=6)
    scenes = sd.generate_dataset(1, 3)
    runs = []
    for _ in range(2):
        model = OccRobNet(cfg)
        _, history = train(model, scenes, cfg)
        runs.append(([b.total for b in history], [p.data.copy() for p in model.parameters()]))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))


def test_empty_dataset_trains_nothing():
    cfg = RunConfig(**TINY, iterations=5)
    _, history = train(OccRobNet(cfg), [], cfg)
    assert history == []
