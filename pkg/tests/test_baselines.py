from collections import Counter

import numpy as np
import pytest

from depth_router_lab.baselines import (RouterParams, rand_model, rand_sol, restricted_candidates, route,
                                        router_grad, router_loss, train_router)
from depth_router_lab.fusion import FusionStrategy, enumerate_solutions, single
from depth_router_lab.scenes import CameraDomain

from conftest import make_sample


def test_rand_model_restricted_to_family(pool):
    rng = np.random.default_rng(0)
    persp = make_sample(domain=CameraDomain.PERSPECTIVE)
    native = make_sample(domain=CameraDomain.NATIVE_ERP)
    got = Counter(rand_model(persp, pool, rng) for _ in range(3000))
    assert set(got) == {single("persp_a"), single("persp_b"), single("persp_c")}
    assert all(abs(n / 3000 - 1 / 3) < 0.04 for n in got.values())
    got = Counter(rand_model(native, pool, rng) for _ in range(2000))
    assert set(got) == {single("erp_a"), single("erp_gen")}
    assert all(s.strategy is FusionStrategy.IDENTITY for s in got)


def test_rand_sol_uniform_over_restricted(pool):
    cands = enumerate_solutions([e.expert_id for e in pool])
    native = make_sample(domain=CameraDomain.NATIVE_ERP)
    allowed = restricted_candidates(native, cands, pool)
    assert len(allowed) == 6 == len(enumerate_solutions(["erp_a", "erp_gen"]))
    rng = np.random.default_rng(1)
    got = Counter(rand_sol(native, cands, pool, rng) for _ in range(6000))
    assert set(got) == set(allowed)
    assert all(abs(n / 6000 - 1 / 6) < 0.03 for n in got.values())


def test_rand_sol_single_candidate_and_fallback(pool):
    s = make_sample(domain=CameraDomain.FISHEYE)
    rng = np.random.default_rng(2)
    assert rand_sol(s, [single("erp_a")], pool, rng) == single("erp_a")
    assert rand_sol(s, [single("persp_a")], pool, rng) == single("persp_a")
    with pytest.raises(ValueError):
        rand_sol(s, [], pool, rng)


def _toy(rng, n=60):
    X = rng.normal(size=(n, 4))
    y = (X[:, 0] > 0).astype(int)
    X[:, 0] += np.where(y == 1, 1.0, -1.0)
    return X, y


def test_router_loss_monotone_on_separable_toy():
    rng = np.random.default_rng(3)
    X, y = _toy(rng)
    _, losses = train_router(X, y, [single("a"), single("b")], np.random.default_rng(0), hidden=16)
    assert len(losses) == 201
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_router_constant_label_accuracy():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(100, 36))
    sols = enumerate_solutions(["a", "b", "c", "d", "e"])
    y = np.full(100, 17)
    params, _ = train_router(X, y, sols, np.random.default_rng(0), learning_rate=0.5)
    acc = np.mean([route(params, x) == sols[17] for x in X])
    assert acc >= 0.99


def test_router_gradient_finite_differences():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(20, 36))
    y = rng.integers(0, 109, 20)
    sols = enumerate_solutions(["a", "b", "c", "d", "e"])
    params = RouterParams.init(36, sols, rng)
    grads = router_grad(params, X, y)
    h = 1e-6
    for _ in range(5):
        dirs = [rng.normal(size=a.shape) for a in params.arrays()]
        shift = lambda s: RouterParams(*(a + s * h * d for a, d in zip(params.arrays(), dirs)), sols)
        fd = (router_loss(shift(1), X, y) - router_loss(shift(-1), X, y)) / (2 * h)
        an = sum(np.sum(g * d) for g, d in zip(grads, dirs))
        assert abs(fd - an) <= 1e-4 * abs(an)


def test_router_json_round_trip():
    rng = np.random.default_rng(6)
    sols = enumerate_solutions(["a", "b"])
    p = RouterParams.init(8, sols, rng, hidden=4)
    q = RouterParams.from_json(p.to_json())
    x = rng.normal(size=8)
    assert route(p, x) == route(q, x) and q.solutions == sols


def test_router_rejects_non_finite():
    X = np.array([[np.inf, 0.0], [0.0, 1.0]])
    with pytest.raises(FloatingPointError):
        train_router(X, np.array([0, 1]), [single("a"), single("b")], np.random.default_rng(0))
