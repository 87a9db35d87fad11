"""Pixel-wise fusion strategies, candidate solutions and per-sample oracle selection."""

from __future__ import annotations

import enum
import itertools
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .depth import DepthMap, DimensionMismatchError, MetricSet, compute_metrics, delta1

INV_DEV_KAPPA = 1e-6  # m^2


class FusionStrategy(str, enum.Enum):
    MEAN = "mean"
    MAX = "max"
    MIN = "min"
    WEIGHTED_INV_DEV = "weighted_inv_dev"
    IDENTITY = "identity"


MULTI_STRATEGIES = (FusionStrategy.MEAN, FusionStrategy.MAX, FusionStrategy.MIN, FusionStrategy.WEIGHTED_INV_DEV)
# Identity first so it wins ties among singles; the rest follow enum order.
_TIE_RANK = {FusionStrategy.IDENTITY: 0, FusionStrategy.MEAN: 1, FusionStrategy.MAX: 2,
             FusionStrategy.MIN: 3, FusionStrategy.WEIGHTED_INV_DEV: 4}


class InvalidSolutionError(ValueError):
    pass


@dataclass(frozen=True, order=False)
class Solution:
    experts: tuple[str, ...]
    strategy: FusionStrategy

    def __post_init__(self):
        experts = tuple(sorted(self.experts))
        strategy = FusionStrategy(self.strategy)
        if not experts:
            raise InvalidSolutionError("a solution needs at least one expert")
        if len(set(experts)) != len(experts):
            raise InvalidSolutionError(f"duplicate experts in solution: {experts}")
        if (len(experts) == 1) != (strategy is FusionStrategy.IDENTITY):
            raise InvalidSolutionError(
                f"strategy {strategy.value!r} is not legal for {len(experts)} expert(s)")
        object.__setattr__(self, "experts", experts)
        object.__setattr__(self, "strategy", strategy)

    @property
    def size(self) -> int:
        return len(self.experts)

    def tie_key(self) -> tuple:
        return (len(self.experts), self.experts, _TIE_RANK[self.strategy])

    def to_json(self) -> dict:
        return {"experts": list(self.experts), "strategy": self.strategy.value}

    def key(self) -> str:
        """Compact canonical JSON encoding, usable as a dictionary/CSV key."""
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, d) -> "Solution":
        if isinstance(d, str):
            d = json.loads(d)
        return cls(tuple(d["experts"]), FusionStrategy(d["strategy"]))

    def check_pool(self, pool_ids) -> None:
        missing = [e for e in self.experts if e not in set(pool_ids)]
        if missing:
            raise InvalidSolutionError(f"experts not in pool: {missing}")


def single(expert_id: str) -> Solution:
    return Solution((expert_id,), FusionStrategy.IDENTITY)


def _fuse_stack(stack: np.ndarray, valid: np.ndarray, strategy: FusionStrategy) -> tuple[np.ndarray, np.ndarray]:
    """Fuse a ``(k, H, W)`` stack; returns (values, valid) with invalid pixels at NaN."""
    any_valid = valid.any(axis=0)
    if valid.all():
        if strategy is FusionStrategy.MEAN:
            return stack.mean(axis=0), any_valid
        if strategy is FusionStrategy.MAX:
            return stack.max(axis=0), any_valid
        if strategy is FusionStrategy.MIN:
            return stack.min(axis=0), any_valid
        med = np.median(stack, axis=0)
        w = 1.0 / (INV_DEV_KAPPA + (stack - med) ** 2)
        return (w * stack).sum(axis=0) / w.sum(axis=0), any_valid

    data = np.where(valid, stack, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"), warnings.catch_warnings():
        # all-NaN pixel columns are expected; they stay invalid
        warnings.simplefilter("ignore", RuntimeWarning)
        if strategy is FusionStrategy.MEAN:
            out = np.nanmean(data, axis=0)
        elif strategy is FusionStrategy.MAX:
            out = np.nanmax(data, axis=0)
        elif strategy is FusionStrategy.MIN:
            out = np.nanmin(data, axis=0)
        else:
            med = np.nanmedian(data, axis=0)
            w = np.where(valid, 1.0 / (INV_DEV_KAPPA + (data - med) ** 2), 0.0)
            out = np.nansum(w * data, axis=0) / w.sum(axis=0)
    return np.where(any_valid, out, np.nan), any_valid


def fuse_maps(maps: list[DepthMap], strategy: FusionStrategy) -> DepthMap:
    strategy = FusionStrategy(strategy)
    if not maps:
        raise ValueError("nothing to fuse")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise DimensionMismatchError("predictions to fuse differ in size")
    if strategy is FusionStrategy.IDENTITY:
        if len(maps) != 1:
            raise InvalidSolutionError("identity fusion takes exactly one prediction")
        return maps[0]
    stack = np.stack([m.values for m in maps])
    valid = np.stack([m.valid for m in maps])
    values, out_valid = _fuse_stack(stack, valid, strategy)
    return DepthMap(values, out_valid)


def fuse(preds, strategy: FusionStrategy) -> DepthMap:
    """Fuse expert predictions pixel-wise over the experts valid at each pixel.

    A fused pixel is invalid only where no expert is valid. ``Identity`` is
    legal for a single prediction only.
    """
    return fuse_maps([p.depth for p in preds], strategy)


def enumerate_solutions(pool_ids, max_subset: int | None = None) -> list[Solution]:
    """Every single plus one solution per multi strategy for each subset of size 2..max_subset.

    Ordered by subset size, then lexicographic expert ids, then strategy.
    """
    ids = sorted(pool_ids)
    if max_subset is None:
        max_subset = len(ids)
    if max_subset < 1:
        raise ValueError("max_subset must be at least 1")
    out = [single(e) for e in ids]
    for k in range(2, min(max_subset, len(ids)) + 1):
        for combo in itertools.combinations(ids, k):
            out.extend(Solution(combo, s) for s in MULTI_STRATEGIES)
    return out


def solution_depth(solution: Solution, preds: dict) -> DepthMap:
    """Fused map for ``solution`` given ``{expert_id: ExpertPrediction}``."""
    try:
        maps = [preds[e].depth for e in solution.experts]
    except KeyError as exc:
        raise KeyError(f"no prediction for expert {exc.args[0]!r}") from None
    return fuse_maps(maps, solution.strategy)


def candidate_delta1(gt: DepthMap, preds: dict, candidates: list[Solution]) -> np.ndarray:
    """delta1 of every candidate; stacks each expert subset once for all its strategies."""
    scores = np.empty(len(candidates))
    by_subset: dict[tuple, list[int]] = {}
    for i, sol in enumerate(candidates):
        by_subset.setdefault(sol.experts, []).append(i)
    for experts, idxs in by_subset.items():
        try:
            maps = [preds[e].depth for e in experts]
        except KeyError as exc:
            raise KeyError(f"no prediction for expert {exc.args[0]!r}") from None
        if len(maps) == 1:
            for i in idxs:
                scores[i] = delta1(maps[0], gt)
            continue
        stack = np.stack([m.values for m in maps])
        valid = np.stack([m.valid for m in maps])
        for i in idxs:
            values, out_valid = _fuse_stack(stack, valid, candidates[i].strategy)
            scores[i] = delta1(DepthMap(values, out_valid), gt)
    return scores


def best_candidate(candidates: list[Solution], scores) -> int:
    """Index of the highest-delta1 candidate with deterministic tie-breaking."""
    if not candidates:
        raise ValueError("empty candidate list")
    best = 0
    for i in range(1, len(candidates)):
        if scores[i] > scores[best] or (scores[i] == scores[best] and candidates[i].tie_key() < candidates[best].tie_key()):
            best = i
    return best


def oracle_solution(gt: DepthMap, candidates: list[Solution], preds: dict) -> tuple[Solution, MetricSet]:
    """The candidate maximising delta1 against ``gt``.

    Ties go to fewer experts, then lexicographically smaller expert ids, then
    strategy order (Identity, Mean, Max, Min, WeightedInvDev).
    """
    if not candidates:
        raise ValueError("empty candidate list")
    scores = candidate_delta1(gt, preds, candidates)
    sol = candidates[best_candidate(candidates, scores)]
    return sol, compute_metrics(solution_depth(sol, preds), gt)
