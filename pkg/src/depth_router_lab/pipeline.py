"""Experiment stages shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import difficulty_quintiles, group_records, group_stats, hard_sample_slice
from .baselines import RouterParams, rand_model, rand_sol, route, train_router
from .config import ConfigError, RunConfig
from .depth import MetricSet, read_raster, write_raster
from .env import AgentEnv, PreparedSample
from .experts import ExpertPrediction, ExpertProfile, default_pool, extract_aux, load_pool
from .fusion import MULTI_STRATEGIES, Solution, enumerate_solutions, single
from .policy import EvalResult, RewardSchedule, train
from .rewards import RewardConfig
from .scenes import CameraDomain, CameraLabel, Sample, Scene, SceneSpec, generate_scene, group_specs
from .seeding import substream
from . import artifacts

log = logging.getLogger(__name__)

THREADS_ENV = "DEPTH_ROUTER_LAB_THREADS"
SPLITS = ("train", "eval")


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError(f"{THREADS_ENV} must be nonnegative")
    return n or (os.cpu_count() or 1)


def parallel_map(fn, items):
    """Order-preserving map, threaded when more than one worker is allowed."""
    n = worker_count()
    items = list(items)
    if n <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def resolve_pool(cfg: RunConfig, base_dir=None) -> list[ExpertProfile]:
    if cfg.pool == "default":
        return default_pool()
    path = Path(cfg.pool)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    if not path.exists():
        raise ConfigError(f"pool file not found: {path}")
    return load_pool(path)


def candidates_for(cfg: RunConfig, pool: list[ExpertProfile]) -> list[Solution]:
    return enumerate_solutions([e.expert_id for e in pool], cfg.max_subset)


def prepare(samples: list[Sample], pool, candidates, predictions: dict | None = None,
            score: bool = True) -> list[PreparedSample]:
    """Wrap samples; with ``score`` the oracle records are computed up front (in parallel)."""
    predictions = predictions or {}
    prepared = [PreparedSample(s, pool, predictions.get(s.sample_id), candidates) for s in samples]
    if score:
        parallel_map(lambda p: p.record, prepared)
    return prepared


def generate_split(cfg: RunConfig, split: str) -> list[Sample]:
    out = []
    for group in cfg.groups:
        specs = group_specs(group, cfg.master_seed, split)
        out.extend(parallel_map(lambda s, g=group: generate_scene(s, g.p_scene, g.p_cam), specs))
    return out


# --- dataset on disk ---------------------------------------------------------

def gen_data(cfg: RunConfig, data_dir) -> list[Path]:
    """Write ground-truth rasters plus ``dataset.json``; returns written paths."""
    data_dir = Path(data_dir)
    written = []
    entries = []
    for split in SPLITS:
        for s in generate_split(cfg, split):
            rel = Path("rasters") / split / f"{s.sample_id}.pfm"
            path = data_dir / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            write_raster(s.gt, path)
            written.append(path)
            entries.append({
                "sample_id": s.sample_id,
                "split": split,
                "spec": s.spec.to_json(),
                "gt": str(rel),
                "observed_scene": s.observed_scene.value,
                "observed_camera": s.observed_camera.value,
            })
    dataset = data_dir / "dataset.json"
    artifacts.write_json(dataset, {"samples": entries})
    written.append(dataset)
    return written


def load_dataset(data_dir, pool) -> dict:
    """Samples per split from ``dataset.json``; entries may carry ingested
    ``predictions: {expert_id: raster path}`` that replace simulated ones."""
    data_dir = Path(data_dir)
    manifest = data_dir / "dataset.json"
    if not manifest.exists():
        raise FileNotFoundError(f"missing prerequisite: {manifest}")
    out = {split: ([], {}) for split in SPLITS}
    pool_ids = {e.expert_id for e in pool}
    for entry in artifacts.read_json(manifest)["samples"]:
        spec = SceneSpec.from_json(entry["spec"])
        gt = read_raster(data_dir / entry["gt"])
        if gt.shape != (spec.height, spec.width):
            raise ValueError(f"{entry['sample_id']}: raster size disagrees with spec")
        sample = Sample(spec, gt, Scene(entry["observed_scene"]), CameraLabel(entry["observed_camera"]),
                        entry["sample_id"])
        samples, preds = out[entry["split"]]
        samples.append(sample)
        if entry.get("predictions"):
            ingested = {}
            for eid, rel in entry["predictions"].items():
                if eid not in pool_ids:
                    raise ValueError(f"{sample.sample_id}: prediction for unknown expert {eid!r}")
                depth = read_raster(data_dir / rel)
                ingested[eid] = ExpertPrediction(eid, depth, extract_aux(depth))
            preds[sample.sample_id] = ingested
    return out


def load_prepared(data_dir, cfg: RunConfig, pool, splits=SPLITS, score: bool = True) -> dict:
    cands = candidates_for(cfg, pool)
    raw = load_dataset(data_dir, pool)
    return {s: prepare(raw[s][0], pool, cands, raw[s][1], score) for s in splits}


# --- analysis ----------------------------------------------------------------

FAMILY_FIELDS = ("group", "n_samples", "best_single_perspective_pct", "best_single_erp_pct",
                 "oracle_has_perspective_pct", "oracle_has_erp_pct", "avg_gain_delta1")
GAIN_FIELDS = ("group", "n_samples", "multi_model_oracle_pct", "mean_gain", "p90_gain", "pct_improved")
QUINTILE_FIELDS = ("group", "quintile", "n_samples", "mean_best_single_delta1", "mean_gain", "std_gain", "pearson_r")


def analysis_tables(prepared: list[PreparedSample], pool) -> dict:
    records = [p.record for p in prepared]
    groups = [(d.value, rs) for d, rs in group_records(records).items()]
    groups.append(("all", records))
    fam_rows, gain_rows, q_rows, summary = [], [], [], {}
    for name, rs in groups:
        st = group_stats(rs, pool, name)
        fam_rows.append({
            "group": name, "n_samples": st.n_samples,
            "best_single_perspective_pct": st.best_single_family_pct["perspective"],
            "best_single_erp_pct": st.best_single_family_pct["erp"],
            "oracle_has_perspective_pct": st.oracle_presence_pct["perspective"],
            "oracle_has_erp_pct": st.oracle_presence_pct["erp"],
            "avg_gain_delta1": st.avg_gain_delta1,
        })
        gain_rows.append({"group": name, "n_samples": st.n_samples,
                          "multi_model_oracle_pct": st.multi_model_oracle_pct, "mean_gain": st.mean_gain,
                          "p90_gain": st.p90_gain, "pct_improved": st.pct_improved})
        entry = {"stats": vars(st).copy()}
        if name != "all" and len(rs) >= 25:
            q = difficulty_quintiles(rs)
            for i in range(len(q.bins)):
                q_rows.append({"group": name, "quintile": f"Q{i + 1}", "n_samples": len(q.bins[i]),
                               "mean_best_single_delta1": q.mean_best_single[i], "mean_gain": q.mean_gain[i],
                               "std_gain": q.std_gain[i], "pearson_r": q.pearson_r})
            entry["quintiles"] = {"mean_gain": q.mean_gain, "std_gain": q.std_gain, "pearson_r": q.pearson_r}
        summary[name] = entry
    return {"family_preference": fam_rows, "fusion_gain": gain_rows, "quintiles": q_rows, "summary": summary}


# --- per-sample method rows --------------------------------------------------

SAMPLE_FIELDS = ("method", "sample_id", "group", "delta1", "delta2", "delta3", "abs_rel", "rmse", "n_valid",
                 "n_experts", "tool_calls", "solution")
GROUP_FIELDS = ("method", "group", "n_samples", "delta1", "delta2", "delta3", "abs_rel", "rmse", "n_bar")


def sample_row(method: str, prepared: PreparedSample, solution: Solution, metrics: MetricSet,
               tool_calls: int | None = None) -> dict:
    row = {"method": method, "sample_id": prepared.sample_id, "group": prepared.domain.value}
    row.update(metrics.as_dict())
    row.update({"n_experts": solution.size, "tool_calls": solution.size if tool_calls is None else tool_calls,
                "solution": solution.key()})
    return row


def policy_rows(result: EvalResult, prepared: list[PreparedSample], method: str = "policy") -> list[dict]:
    by_id = {p.sample_id: p for p in prepared}
    return [sample_row(method, by_id[ro.sample_id], ro.solution, ro.metrics, ro.tool_calls) for ro in result.rollouts]


def aggregate_rows(rows: list[dict], group_order) -> list[dict]:
    """Per (method, group) uniform means of per-sample metrics, methods in first-seen order."""
    methods = list(dict.fromkeys(r["method"] for r in rows))
    out = []
    for m in methods:
        for g in group_order:
            sel = [r for r in rows if r["method"] == m and r["group"] == g]
            if not sel:
                continue
            agg = {"method": m, "group": g, "n_samples": len(sel)}
            for k in ("delta1", "delta2", "delta3", "abs_rel", "rmse"):
                agg[k] = float(np.mean([float(r[k]) for r in sel]))
            agg["n_bar"] = float(np.mean([float(r["n_experts"]) for r in sel]))
            out.append(agg)
    return out


def router_features(env: AgentEnv, prepared: list[PreparedSample]) -> np.ndarray:
    return np.array([env.featurize(env.reset(p)) for p in prepared])


def fit_router(cfg: RunConfig, env: AgentEnv, train_set: list[PreparedSample], candidates) -> tuple:
    index = {s: i for i, s in enumerate(candidates)}
    X = router_features(env, train_set)
    y = np.array([index[p.record.oracle] for p in train_set])
    rng = substream(cfg.master_seed, "baseline", "router")
    return train_router(X, y, candidates, rng, cfg.router.hidden, cfg.router.learning_rate, cfg.router.epochs)


def baseline_rows(cfg: RunConfig, env: AgentEnv, pool, train_set, eval_set, candidates) -> tuple[list[dict], RouterParams]:
    ids = [e.expert_id for e in pool]
    router, _ = fit_router(cfg, env, train_set, candidates)
    X = router_features(env, eval_set)
    rows = []
    for eid in ids:
        rows += [sample_row(f"expert:{eid}", p, single(eid), p.metrics_for(single(eid))) for p in eval_set]
    for s in MULTI_STRATEGIES:
        sol = Solution(tuple(ids), s)
        rows += [sample_row(f"fusion:{s.value}", p, sol, p.metrics_for(sol)) for p in eval_set]
    for p in eval_set:
        sol = rand_model(p.sample, pool, substream(cfg.master_seed, "baseline", "rand_model", p.sample_id))
        rows.append(sample_row("rand_model", p, sol, p.metrics_for(sol)))
    for p in eval_set:
        sol = rand_sol(p.sample, candidates, pool, substream(cfg.master_seed, "baseline", "rand_sol", p.sample_id))
        rows.append(sample_row("rand_sol", p, sol, p.metrics_for(sol)))
    for p, x in zip(eval_set, X):
        sol = route(router, x)
        rows.append(sample_row("router", p, sol, p.metrics_for(sol)))
    for p in eval_set:
        sol, m = p.oracle()
        rows.append(sample_row("oracle", p, sol, m))
    return rows, router


# --- training ----------------------------------------------------------------

def sweep_name(r: RewardConfig) -> str:
    return f"lam{r.lam:g}_tau{r.tau:g}_nmax{r.n_max}"


def train_policy(cfg: RunConfig, env: AgentEnv, train_set, schedule: RewardSchedule | None = None,
                 rollout_log: list | None = None):
    return train(env, train_set, schedule or cfg.rewards, cfg.grpo, cfg.master_seed, rollout_log=rollout_log)


def hard_slice_ids(rows: list[dict], group: str, frac: float) -> set[str]:
    """Worst ``frac`` of a group's samples by best single-expert delta1 (from ``expert:*`` rows)."""
    from .analysis import SampleRecord

    best: dict[str, float] = {}
    for r in rows:
        if r["group"] == group and r["method"].startswith("expert:"):
            best[r["sample_id"]] = max(best.get(r["sample_id"], -1.0), float(r["delta1"]))
    if not best:
        return set()
    stub = [SampleRecord(sid, CameraDomain(group), {"best": d}, "best", single("best"), d) for sid, d in best.items()]
    return {r.sample_id for r in hard_sample_slice(stub, frac)}
