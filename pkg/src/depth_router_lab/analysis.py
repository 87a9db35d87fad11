"""Fusion-analysis statistics: family preference, fusion gain, difficulty quintiles, hard slices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .experts import ExpertProfile, Family
from .fusion import Solution, best_candidate, candidate_delta1
from .scenes import CameraDomain, Sample


class UndefinedCorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    """Per-sample summary: single-expert scores, best single and oracle."""

    sample_id: str
    domain: CameraDomain
    single_delta1: dict
    best_single: str
    oracle: Solution
    oracle_delta1: float

    @property
    def best_single_delta1(self) -> float:
        return self.single_delta1[self.best_single]

    @property
    def gain(self) -> float:
        return self.oracle_delta1 - self.best_single_delta1


def best_single_expert(single_delta1: dict, pool_ids) -> str:
    """Argmax delta1 among singles; ties go to the earlier expert in pool order."""
    best = None
    for eid in pool_ids:
        if best is None or single_delta1[eid] > single_delta1[best]:
            best = eid
    return best


def build_record(sample: Sample, preds: dict, pool: list[ExpertProfile], candidates: list[Solution]) -> SampleRecord:
    scores = candidate_delta1(sample.gt, preds, candidates)
    pool_ids = [e.expert_id for e in pool]
    singles = {}
    for sol, s in zip(candidates, scores):
        if sol.size == 1:
            singles[sol.experts[0]] = float(s)
    missing = [e for e in pool_ids if e not in singles]
    if missing:
        raise ValueError(f"candidate list lacks singles for {missing}")
    best = best_single_expert(singles, pool_ids)
    i = best_candidate(candidates, scores)
    return SampleRecord(sample.sample_id, sample.domain, singles, best, candidates[i], float(scores[i]))


@dataclass
class GroupStats:
    group: str
    n_samples: int
    best_single_family_pct: dict = field(default_factory=dict)
    oracle_presence_pct: dict = field(default_factory=dict)
    avg_gain_delta1: float = 0.0
    multi_model_oracle_pct: float = 0.0
    mean_gain: float = 0.0
    p90_gain: float = 0.0
    pct_improved: float = 0.0


def _family_of(pool: list[ExpertProfile]) -> dict:
    return {e.expert_id: e.family for e in pool}


def _require(records):
    if not records:
        raise ValueError("empty group")


def family_preference(records: list[SampleRecord], pool: list[ExpertProfile], group: str = "") -> GroupStats:
    """Share of samples won by each family, oracle family presence and mean oracle gain."""
    _require(records)
    fam = _family_of(pool)
    n = len(records)
    best_pct, presence_pct = {}, {}
    for f in Family:
        best_pct[f.value] = 100.0 * sum(fam[r.best_single] is f for r in records) / n
        presence_pct[f.value] = 100.0 * sum(any(fam[e] is f for e in r.oracle.experts) for r in records) / n
    gains = [r.gain for r in records]
    return GroupStats(group, n, best_pct, presence_pct, avg_gain_delta1=float(np.mean(gains)))


def percentile(values, q: float) -> float:
    """Percentile by linear interpolation between order statistics (rank ``q/100*(n-1)``)."""
    return float(np.percentile(np.asarray(values, dtype=float), q, method="linear"))


def fusion_gain_stats(records: list[SampleRecord], group: str = "") -> GroupStats:
    _require(records)
    gains = np.array([r.gain for r in records])
    n = len(records)
    return GroupStats(
        group,
        n,
        avg_gain_delta1=float(gains.mean()),
        multi_model_oracle_pct=100.0 * sum(r.oracle.size >= 2 for r in records) / n,
        mean_gain=float(gains.mean()),
        p90_gain=percentile(gains, 90),
        pct_improved=100.0 * float(np.count_nonzero(gains > 0)) / n,
    )


def group_stats(records: list[SampleRecord], pool: list[ExpertProfile], group: str = "") -> GroupStats:
    """Family-preference and fusion-gain columns combined."""
    fp = family_preference(records, pool, group)
    fg = fusion_gain_stats(records, group)
    fg.best_single_family_pct = fp.best_single_family_pct
    fg.oracle_presence_pct = fp.oracle_presence_pct
    return fg


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two equal-length 1-D sequences")
    if x.size < 2:
        raise ValueError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant sequence")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class QuintileStats:
    bins: list  # list of lists of sample_ids, hardest first
    mean_gain: list
    std_gain: list
    mean_best_single: list
    pearson_r: float


def _by_difficulty(records: list[SampleRecord]) -> list[SampleRecord]:
    return sorted(records, key=lambda r: (r.best_single_delta1, r.sample_id))


def difficulty_quintiles(records: list[SampleRecord], n_bins: int = 5) -> QuintileStats:
    """Gain statistics per best-single-delta1 quintile (Q1 hardest) plus pooled Pearson r.

    Bins differ in size by at most one, the larger ones first. ``std`` is the
    population standard deviation within a bin.
    """
    if len(records) < 5 * n_bins:
        raise ValueError(f"need at least {5 * n_bins} samples, got {len(records)}")
    ordered = _by_difficulty(records)
    bins = [list(chunk) for chunk in np.array_split(np.arange(len(ordered)), n_bins)]
    ids, means, stds, best = [], [], [], []
    for idx in bins:
        chunk = [ordered[i] for i in idx]
        gains = np.array([r.gain for r in chunk])
        ids.append([r.sample_id for r in chunk])
        means.append(float(gains.mean()))
        stds.append(float(gains.std()))
        best.append(float(np.mean([r.best_single_delta1 for r in chunk])))
    r = pearson([x.best_single_delta1 for x in records], [x.gain for x in records])
    return QuintileStats(ids, means, stds, best, r)


def hard_sample_slice(records: list[SampleRecord], frac: float = 0.10) -> list[SampleRecord]:
    """The ``ceil(frac * N)`` records with the lowest best-single delta1 (ties by sample_id)."""
    if not records:
        raise ValueError("empty input")
    if not 0.0 < frac <= 1.0:
        raise ValueError("frac must lie in (0, 1]")
    k = math.ceil(frac * len(records) - 1e-9)
    return _by_difficulty(records)[:k]


def group_records(records: list[SampleRecord]) -> dict:
    """Records keyed by camera domain, in enum order, skipping empty groups."""
    out = {}
    for d in CameraDomain:
        sel = [r for r in records if r.domain is d]
        if sel:
            out[d] = sel
    return out
