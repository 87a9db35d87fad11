"""End-to-end acceptance checks; each test prints one PASS/FAIL line for its criterion."""

import time

import mpmath
import numpy as np
import pytest

from depth_router_lab import artifacts, pipeline
from depth_router_lab.analysis import difficulty_quintiles, group_records, group_stats
from depth_router_lab.baselines import RouterParams, router_grad, router_loss
from depth_router_lab.cli import main
from depth_router_lab.config import RunConfig
from depth_router_lab.env import AgentEnv
from depth_router_lab.experts import default_pool
from depth_router_lab.fusion import enumerate_solutions
from depth_router_lab.policy import (GrpoConfig, PolicyParams, RewardSchedule, build_step_batch, channel_advantages,
                                     evaluate, sample_rollout, surrogate, surrogate_grad)
from depth_router_lab.rewards import RewardConfig, efficiency_metric_reward
from depth_router_lab.scenes import CameraDomain

pytestmark = pytest.mark.slow

GROUPS = [d.value for d in CameraDomain]


# --- 1 ----------------------------------------------------------------------------

def _mp_reward(m_i, m_ref, n_i, n_ref, lam, tau, n_max, eps):
    m_i, m_ref, lam, tau, eps = map(mpmath.mpf, (m_i, m_ref, lam, tau, eps))
    dm = (m_i - m_ref) / (abs(m_ref) + eps)
    dn = mpmath.mpf(n_i - n_ref) / n_max
    return dm - lam * dn * mpmath.exp(-abs(dm) / tau)


def test_c01_reward_formula_exactness(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    with mpmath.workdps(40):
        for _ in range(1000):
            m_i, m_ref = rng.uniform(0, 1), rng.uniform(0.01, 1)
            n_i, n_ref = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            cfg = RewardConfig(lam=rng.uniform(0, 2), tau=rng.uniform(0.05, 5), n_max=int(rng.integers(1, 6)))
            got = efficiency_metric_reward(m_i, m_ref, n_i, n_ref, cfg)
            want = _mp_reward(m_i, m_ref, n_i, n_ref, cfg.lam, cfg.tau, cfg.n_max, cfg.eps)
            err = abs(mpmath.mpf(got) - want) / abs(want) if want != 0 else abs(mpmath.mpf(got))
            worst = max(worst, float(err))
    example = efficiency_metric_reward(0.85, 0.80, 2, 1, RewardConfig(lam=0.2, tau=3.4, n_max=2, eps=1e-8))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-12 and abs(example + 0.035679) <= 1e-6 and elapsed < 1.0
    record_criterion(1, "reward formula exactness", ok,
                     f"max rel err {worst:.2e} over 1000 tuples, example {example:.7f}, {elapsed:.2f}s")
    assert ok


# --- 2 ----------------------------------------------------------------------------

def test_c02_group_normalisation(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    cfg = GrpoConfig()
    worst_mean = worst_var = 0.0
    degenerate_ok = True
    n_degenerate = 0
    for G in (2, 8, 64):
        for _ in range(50):
            R = rng.normal(size=(G, 4)) * rng.uniform(0.01, 10, 4) + rng.uniform(-5, 5, 4)
            dead = rng.random(4) < 0.25
            R[:, dead] = rng.normal()
            adv = channel_advantages(R, cfg)
            for k in range(4):
                if dead[k]:
                    n_degenerate += 1
                    degenerate_ok &= bool(np.all(adv[:, k] == 0.0))
                else:
                    worst_mean = max(worst_mean, abs(adv[:, k].mean()))
                    worst_var = max(worst_var, abs(adv[:, k].var() - 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst_mean <= 1e-9 and worst_var <= 1e-6 and degenerate_ok and elapsed < 1.0
    record_criterion(2, "group advantage normalisation", ok,
                     f"max |mean| {worst_mean:.1e}, max |var-1| {worst_var:.1e}, "
                     f"{n_degenerate} degenerate channels exactly 0: {degenerate_ok}, {elapsed:.2f}s")
    assert ok


# --- 3 ----------------------------------------------------------------------------

def _directional_error(f, grad_dot, h=1e-6):
    fd = (f(h) - f(-h)) / (2 * h)
    return abs(fd - grad_dot) / max(abs(grad_dot), 1e-300)


def test_c03_gradient_oracles(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    pool = default_pool()
    env = AgentEnv(pool)
    from depth_router_lab.env import PreparedSample
    from depth_router_lab.scenes import Scene, SceneSpec, generate_scene
    samples = [PreparedSample(generate_scene(SceneSpec(d, Scene.INDOOR, 50 + i, 16, 12)), pool)
               for i, d in enumerate(CameraDomain)]

    worst_policy = 0.0
    for probe in range(100):
        old = PolicyParams(rng.normal(0, 0.5, (12, 36)), rng.normal(0, 0.5, 12))
        groups = []
        for p in samples[:2]:
            ros = [sample_rollout(old, env, p, rng) for _ in range(4)]
            groups.append((ros, rng.normal(size=4), rng.normal(size=4)))
        batch = build_step_batch(groups, env.n_actions)
        cur = old.copy()
        cur.W += rng.normal(0, 0.1, cur.W.shape)
        cur.b += rng.normal(0, 0.1, cur.b.shape)
        cfg = GrpoConfig(kl_coeff=0.0 if probe % 2 else 0.2)
        gW, gb = surrogate_grad(cur, batch, cfg)
        dW, db = rng.normal(size=cur.W.shape), rng.normal(size=cur.b.shape)

        def f(h):
            q = cur.copy()
            q.W += h * dW
            q.b += h * db
            return surrogate(q, batch, cfg)

        worst_policy = max(worst_policy, _directional_error(f, np.sum(gW * dW) + np.sum(gb * db)))

    sols = enumerate_solutions([e.expert_id for e in pool])
    worst_router = 0.0
    for _ in range(100):
        X = rng.normal(size=(16, 36))
        y = rng.integers(0, len(sols), 16)
        params = RouterParams.init(36, sols, rng)
        grads = router_grad(params, X, y)
        dirs = [rng.normal(size=a.shape) for a in params.arrays()]

        def f(h):
            return router_loss(RouterParams(*(a + h * d for a, d in zip(params.arrays(), dirs)), sols), X, y)

        worst_router = max(worst_router, _directional_error(f, sum(np.sum(g * d) for g, d in zip(grads, dirs))))
    elapsed = time.perf_counter() - t0
    ok = worst_policy < 1e-4 and worst_router < 1e-4 and elapsed < 30
    record_criterion(3, "gradient oracles", ok,
                     f"surrogate max rel err {worst_policy:.1e}, router {worst_router:.1e}, "
                     f"100 probes each, {elapsed:.1f}s")
    assert ok


# --- 4-7: calibration run ---------------------------------------------------------------

@pytest.fixture(scope="module")
def calibration():
    t0 = time.perf_counter()
    cfg = RunConfig()
    pool = default_pool()
    samples = pipeline.generate_split(cfg, "train")
    prepared = pipeline.prepare(samples, pool, pipeline.candidates_for(cfg, pool))
    records = [p.record for p in prepared]
    return records, pool, time.perf_counter() - t0


def test_c04_oracle_dominance(calibration, record_criterion):
    records, _, elapsed = calibration
    by_group = group_records(records)
    holds = sum(r.oracle_delta1 >= r.best_single_delta1 for r in records)
    ok = holds == len(records) and all(len(v) == 200 for v in by_group.values()) and elapsed < 120
    record_criterion(4, "oracle dominance", ok, f"{holds}/{len(records)} samples, {elapsed:.1f}s")
    assert ok


def test_c05_family_preference(calibration, record_criterion):
    records, pool, elapsed = calibration
    by_group = group_records(records)
    persp = group_stats(by_group[CameraDomain.PERSPECTIVE], pool).best_single_family_pct["perspective"]
    native = group_stats(by_group[CameraDomain.NATIVE_ERP], pool).best_single_family_pct["erp"]
    ok = persp >= 70 and native >= 83 and elapsed < 120
    record_criterion(5, "family preference calibration", ok,
                     f"Perspective best-single perspective-family {persp:.1f}% (>=70), "
                     f"NativeErp best-single erp-family {native:.1f}% (>=83)")
    assert ok


def test_c06_fusion_prevalence(calibration, record_criterion):
    records, pool, _ = calibration
    pct = group_stats(records, pool).multi_model_oracle_pct
    ok = pct >= 50
    record_criterion(6, "fusion prevalence", ok, f"pooled multi-model oracle {pct:.1f}% (>=50)")
    assert ok


def test_c07_difficulty_correlation(calibration, record_criterion):
    records, _, _ = calibration
    parts, ok = [], True
    for d, recs in group_records(records).items():
        q = difficulty_quintiles(recs)
        good = q.pearson_r < -0.2 and q.mean_gain[0] > q.mean_gain[-1]
        ok &= good
        parts.append(f"{d.value} r={q.pearson_r:.3f} Q1={q.mean_gain[0]:.3f} Q5={q.mean_gain[-1]:.3f}")
    record_criterion(7, "difficulty correlation", ok, "; ".join(parts))
    assert ok


# --- 8, 10, 11: default CLI run and its repeat -----------------------------------------

@pytest.fixture(scope="module")
def cli_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    a, b = base / "a", base / "b"
    t0 = time.perf_counter()
    for cmd in ("gen-data", "train", "eval", "baselines", "report"):
        assert main([cmd, "--seed", "0", "--out", str(a)]) == 0
    first = time.perf_counter() - t0
    t0 = time.perf_counter()
    for cmd in ("gen-data", "train", "eval"):
        assert main([cmd, "--seed", "0", "--out", str(b)]) == 0
    repeat = time.perf_counter() - t0
    return a, b, first, repeat


def _pooled(rows):
    out = {}
    for r in rows:
        out.setdefault(r["method"], []).append(float(r["delta1"]))
    return {m: float(np.mean(v)) for m, v in out.items()}


def test_c08_policy_quality(cli_runs, record_criterion):
    a, _, elapsed, _ = cli_runs
    rows = artifacts.read_csv(a / "eval" / "per_sample.csv") + artifacts.read_csv(a / "baselines" / "per_sample.csv")
    means = _pooled(rows)
    n_eval = sum(r["method"] == "policy" for r in rows)
    rivals = {m: v for m, v in means.items() if m in ("rand_model", "rand_sol") or m.startswith("expert:")}
    ok = n_eval == 800 and all(means["policy"] > v for v in rivals.values()) and elapsed < 600
    strongest = max(rivals, key=rivals.get)
    record_criterion(8, "policy quality ordering", ok,
                     f"policy {means['policy']:.4f} vs rand_model {means['rand_model']:.4f}, "
                     f"rand_sol {means['rand_sol']:.4f}, strongest rival {strongest} {rivals[strongest]:.4f}; "
                     f"{n_eval} eval samples, {elapsed:.0f}s")
    assert ok


def test_c09_efficiency_tradeoff(cli_runs, record_criterion):
    a, _, _, _ = cli_runs
    t0 = time.perf_counter()
    cfg = RunConfig()
    pool = default_pool()
    env = AgentEnv(pool, cfg.max_turns)
    sets = pipeline.load_prepared(a / "data", cfg, pool, score=False)
    n_bars = []
    for lam in (0.1, 0.2, 0.4):
        schedule = RewardSchedule.uniform(RewardConfig(lam=lam, tau=3.4, n_max=2))
        policy, _ = pipeline.train_policy(cfg, env, sets["train"], schedule)
        n_bars.append(evaluate(policy, env, sets["eval"]).n_bar)
    elapsed = time.perf_counter() - t0
    ok = n_bars[0] >= n_bars[1] >= n_bars[2] and elapsed < 1800
    record_criterion(9, "efficiency trade-off", ok,
                     "n_bar at lambda 0.1/0.2/0.4 = " + " / ".join(f"{n:.4f}" for n in n_bars) + f", {elapsed:.0f}s")
    assert ok


def _advantage(rows, group):
    by = {r["method"]: float(r["delta1"]) for r in rows if r["group"] == group}
    best = max(v for k, v in by.items() if k.startswith("expert:"))
    return by["policy"] - best


def test_c10_hard_sample_improvement(cli_runs, record_criterion):
    a, _, _, _ = cli_runs
    full = artifacts.read_csv(a / "report" / "comparison.csv")
    hard = artifacts.read_csv(a / "report" / "hard_samples.csv")
    families = ("perspective", "native_erp", "fisheye")
    wins, parts = 0, []
    for g in families:
        fa, ha = _advantage(full, g), _advantage(hard, g)
        wins += ha >= fa
        parts.append(f"{g} hard {ha:+.4f} vs full {fa:+.4f}")
    ev = f"erp_variant (reported only) hard {_advantage(hard, 'erp_variant'):+.4f} vs full {_advantage(full, 'erp_variant'):+.4f}"
    ok = wins >= 2
    record_criterion(10, "hard-sample improvement", ok, f"{wins}/3 families; " + "; ".join(parts) + "; " + ev)
    assert ok


def test_c11_determinism(cli_runs, record_criterion):
    a, b, first, repeat = cli_runs
    files = sorted(str(p.relative_to(a)) for stage in ("data", "train", "eval")
                   for p in (a / stage).rglob("*") if p.is_file())
    csvs = [n for n in files if n.endswith(".csv")]
    same = [n for n in files if (b / n).exists() and (a / n).read_bytes() == (b / n).read_bytes()]
    ok = len(same) == len(files) and len(csvs) >= 4
    record_criterion(11, "determinism", ok, f"{len(same)}/{len(files)} files byte-identical "
                                             f"({len(csvs)} CSVs, rasters, policy, manifests); "
                                             f"repeat took {repeat:.0f}s (first full run {first:.0f}s)")
    assert ok
