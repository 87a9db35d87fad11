"""Command-line entry point: ``depth-router-lab <subcommand> [--config] [--seed] [--out]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import artifacts, pipeline
from .config import ConfigError, RunConfig, load_config
from .env import AgentEnv
from .policy import PolicyParams, RewardSchedule, evaluate
from .pipeline import GROUP_FIELDS, SAMPLE_FIELDS

log = logging.getLogger("depth_router_lab")

SUBCOMMANDS = ("gen-data", "analyze", "train", "eval", "baselines", "report")
TRAINLOG_DESC = "per-step GRPO training log"
SWEEP_FIELDS = ("name", "lambda", "tau", "n_max", "delta1", "abs_rel", "rmse", "n_bar")


class MissingPrerequisites(RuntimeError):
    pass


def _require(paths):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise MissingPrerequisites("missing prerequisites: " + ", ".join(missing))


def _groups(cfg: RunConfig) -> list[str]:
    return [g.domain.value for g in cfg.groups]


def cmd_gen_data(cfg: RunConfig, out: Path, base: Path) -> None:
    pipeline.resolve_pool(cfg, base)
    d = out / "data"
    written = pipeline.gen_data(cfg, d)
    artifacts.write_manifest(d, "gen-data", cfg, written)


def cmd_analyze(cfg: RunConfig, out: Path, base: Path) -> None:
    _require([out / "data" / "dataset.json"])
    pool = pipeline.resolve_pool(cfg, base)
    prepared = pipeline.load_prepared(out / "data", cfg, pool, splits=("train",))["train"]
    tables = pipeline.analysis_tables(prepared, pool)
    d = out / "analysis"
    paths = [d / "family_preference.csv", d / "fusion_gain.csv", d / "quintiles.csv", d / "analysis.json"]
    artifacts.write_csv(paths[0], pipeline.FAMILY_FIELDS, tables["family_preference"],
                        "best-single family share and oracle family presence per group (percent)")
    artifacts.write_csv(paths[1], pipeline.GAIN_FIELDS, tables["fusion_gain"],
                        "per-sample delta1 fusion gain of the oracle over the best single expert")
    artifacts.write_csv(paths[2], pipeline.QUINTILE_FIELDS, tables["quintiles"],
                        "fusion gain by best-single delta1 quintile (Q1 hardest); pooled Pearson r per group")
    artifacts.write_json(paths[3], tables["summary"])
    artifacts.write_manifest(d, "analyze", cfg, paths)


def cmd_train(cfg: RunConfig, out: Path, base: Path) -> None:
    _require([out / "data" / "dataset.json"])
    pool = pipeline.resolve_pool(cfg, base)
    env = AgentEnv(pool, cfg.max_turns)
    train_set = pipeline.load_prepared(out / "data", cfg, pool, splits=("train",), score=False)["train"]
    d = out / "train"
    rollout_log: list = []
    policy, trainlog = pipeline.train_policy(cfg, env, train_set, rollout_log=rollout_log)
    paths = [d / "policy.json", d / "trainlog.csv", d / "rollouts.jsonl"]
    artifacts.write_json(paths[0], policy.to_json())
    artifacts.write_csv(paths[1], list(trainlog[0]) if trainlog else ["step"], trainlog, TRAINLOG_DESC)
    artifacts.write_jsonl(paths[2], rollout_log)
    for rcfg in cfg.sweep:
        name = pipeline.sweep_name(rcfg)
        sp, slog = pipeline.train_policy(cfg, env, train_set, RewardSchedule.uniform(rcfg))
        sd = d / "sweep" / name
        artifacts.write_json(sd / "policy.json", {**sp.to_json(), "rewards": rcfg.to_json()})
        artifacts.write_csv(sd / "trainlog.csv", list(slog[0]) if slog else ["step"], slog, TRAINLOG_DESC)
        paths += [sd / "policy.json", sd / "trainlog.csv"]
    artifacts.write_manifest(d, "train", cfg, paths)


def _freq_rows(result) -> list[dict]:
    rows = []
    for group, counter in result.solution_freq.items():
        total = sum(counter.values())
        for key, n in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0])):
            rows.append({"group": group.value, "solution": key, "count": n, "fraction": n / total})
    return rows


def cmd_eval(cfg: RunConfig, out: Path, base: Path) -> None:
    _require([out / "data" / "dataset.json", out / "train" / "policy.json"])
    pool = pipeline.resolve_pool(cfg, base)
    env = AgentEnv(pool, cfg.max_turns)
    eval_set = pipeline.load_prepared(out / "data", cfg, pool, splits=("eval",), score=False)["eval"]
    policy = PolicyParams.from_json(artifacts.read_json(out / "train" / "policy.json"))
    result = evaluate(policy, env, eval_set)
    rows = pipeline.policy_rows(result, eval_set)
    d = out / "eval"
    paths = [d / "per_sample.csv", d / "metrics.csv", d / "solution_freq.csv", d / "rollouts.jsonl"]
    artifacts.write_csv(paths[0], SAMPLE_FIELDS, rows, "per-sample greedy evaluation of the trained policy")
    artifacts.write_csv(paths[1], GROUP_FIELDS, pipeline.aggregate_rows(rows, _groups(cfg)),
                        "per-group mean metrics")
    artifacts.write_csv(paths[2], ("group", "solution", "count", "fraction"), _freq_rows(result),
                        "selected solution frequency per group")
    artifacts.write_jsonl(paths[3], [ro.to_json() for ro in result.rollouts])
    sweep_dir = out / "train" / "sweep"
    if cfg.sweep:
        sweep_rows = []
        for rcfg in cfg.sweep:
            name = pipeline.sweep_name(rcfg)
            ppath = sweep_dir / name / "policy.json"
            _require([ppath])
            res = evaluate(PolicyParams.from_json(artifacts.read_json(ppath)), env, eval_set)
            srows = pipeline.policy_rows(res, eval_set, method=name)
            agg = pipeline.aggregate_rows([dict(r, group="all") for r in srows], ["all"])[0]
            sweep_rows.append({"name": name, "lambda": rcfg.lam, "tau": rcfg.tau, "n_max": rcfg.n_max,
                               "delta1": agg["delta1"], "abs_rel": agg["abs_rel"], "rmse": agg["rmse"],
                               "n_bar": res.n_bar})
        paths.append(d / "sweep.csv")
        artifacts.write_csv(paths[-1], SWEEP_FIELDS, sweep_rows, "reward-hyperparameter sweep, pooled over groups")
    artifacts.write_manifest(d, "eval", cfg, paths)


def cmd_baselines(cfg: RunConfig, out: Path, base: Path) -> None:
    _require([out / "data" / "dataset.json"])
    pool = pipeline.resolve_pool(cfg, base)
    env = AgentEnv(pool, cfg.max_turns)
    prepared = pipeline.load_prepared(out / "data", cfg, pool)
    cands = pipeline.candidates_for(cfg, pool)
    rows, router = pipeline.baseline_rows(cfg, env, pool, prepared["train"], prepared["eval"], cands)
    d = out / "baselines"
    paths = [d / "per_sample.csv", d / "metrics.csv", d / "router.json"]
    artifacts.write_csv(paths[0], SAMPLE_FIELDS, rows, "per-sample evaluation of baseline methods")
    artifacts.write_csv(paths[1], GROUP_FIELDS, pipeline.aggregate_rows(rows, _groups(cfg)),
                        "per-group mean metrics")
    artifacts.write_json(paths[2], router.to_json())
    artifacts.write_manifest(d, "baselines", cfg, paths)


def build_report(cfg: RunConfig, out: Path) -> list[Path]:
    need = [out / "eval" / "per_sample.csv", out / "eval" / "solution_freq.csv", out / "baselines" / "per_sample.csv"]
    _require(need)
    rows = artifacts.read_csv(need[0]) + artifacts.read_csv(need[2])
    groups = _groups(cfg)
    d = out / "report"
    paths = [d / "comparison.csv", d / "hard_samples.csv", d / "solution_freq.csv"]
    artifacts.write_csv(paths[0], GROUP_FIELDS, pipeline.aggregate_rows(rows, groups),
                        "method x group comparison on the evaluation split")
    hard_rows = []
    for g in groups:
        ids = pipeline.hard_slice_ids(rows, g, cfg.hard_fraction)
        hard_rows += [r for r in rows if r["group"] == g and r["sample_id"] in ids]
    artifacts.write_csv(paths[1], GROUP_FIELDS, pipeline.aggregate_rows(hard_rows, groups),
                        f"method x group comparison on the worst {cfg.hard_fraction:g} of samples by best single delta1")
    freq = artifacts.read_csv(need[1])
    artifacts.write_csv(paths[2], ("group", "solution", "count", "fraction"), freq,
                        "selected solution frequency per group")
    sweep = out / "eval" / "sweep.csv"
    if sweep.exists():
        paths.append(d / "ablation.csv")
        artifacts.write_csv(paths[-1], SWEEP_FIELDS, artifacts.read_csv(sweep),
                            "reward-hyperparameter ablation, pooled over groups")
    return paths


def cmd_report(cfg: RunConfig, out: Path, base: Path) -> None:
    paths = build_report(cfg, out)
    artifacts.write_manifest(out / "report", "report", cfg, paths)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "eval": cmd_eval,
    "baselines": cmd_baselines,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depth-router-lab", description=__doc__)
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=Path, help="JSON run configuration (defaults used when omitted)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", type=Path, default=Path("runs/default"), help="run directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _error(kind: str, exc: BaseException) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.with_seed(args.seed)
        pipeline.worker_count()
    except (ConfigError, OSError, ValueError) as exc:
        _error("config", exc)
        return 2
    base = args.config.parent if args.config else Path.cwd()
    try:
        COMMANDS[args.command](cfg, args.out, base)
    except ConfigError as exc:
        _error("config", exc)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("command failed", exc_info=True)
        _error("runtime", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
