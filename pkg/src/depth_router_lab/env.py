"""Multi-turn tool-use episodes: camera estimate, expert calls, fuse-and-answer."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .depth import DepthMap, MetricSet, compute_metrics
from .experts import ExpertPrediction, ExpertProfile, predict
from .fusion import FusionStrategy, Solution, enumerate_solutions, solution_depth, single
from .scenes import CameraLabel, Sample, Scene

MAX_TURNS = 5
FEATURE_LAYOUT_VERSION = 1
AUX_DEPTH_SCALE = 100.0  # meters

FINALIZE_STRATEGIES = (FusionStrategy.MEAN, FusionStrategy.MAX, FusionStrategy.MIN,
                       FusionStrategy.WEIGHTED_INV_DEV, FusionStrategy.IDENTITY)


class ActionKind(str, enum.Enum):
    ESTIMATE_CAMERA = "estimate_camera_type"
    CALL_EXPERT = "call_expert"
    FINALIZE = "finalize"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    expert_id: str | None = None
    strategy: FusionStrategy | None = None

    def to_json(self) -> dict:
        if self.kind is ActionKind.CALL_EXPERT:
            return {"call_expert": self.expert_id}
        if self.kind is ActionKind.FINALIZE:
            return {"finalize": self.strategy.value}
        return {"tool": self.kind.value}


def call(expert_id: str) -> Action:
    return Action(ActionKind.CALL_EXPERT, expert_id=expert_id)


def finalize(strategy) -> Action:
    return Action(ActionKind.FINALIZE, strategy=FusionStrategy(strategy))


ESTIMATE_CAMERA = Action(ActionKind.ESTIMATE_CAMERA)


class PreparedSample:
    """A sample plus lazily computed expert predictions and reference solutions.

    Predictions come from the simulator unless supplied up front (e.g. real
    rasters ingested from a manifest).
    """

    def __init__(self, sample: Sample, pool: list[ExpertProfile], predictions: dict | None = None,
                 candidates: list[Solution] | None = None):
        self.sample = sample
        self.pool = pool
        self._experts = {e.expert_id: e for e in pool}
        self._preds = dict(predictions or {})
        self._candidates = candidates
        self._oracle = None
        self._record = None
        self._metric_cache: dict = {}

    @property
    def sample_id(self) -> str:
        return self.sample.sample_id

    @property
    def domain(self):
        return self.sample.domain

    def prediction(self, expert_id: str) -> ExpertPrediction:
        pred = self._preds.get(expert_id)
        if pred is None:
            pred = predict(self._experts[expert_id], self.sample)
            self._preds[expert_id] = pred
        return pred

    def predictions(self) -> dict:
        return {e.expert_id: self.prediction(e.expert_id) for e in self.pool}

    @property
    def candidates(self) -> list[Solution]:
        if self._candidates is None:
            self._candidates = enumerate_solutions([e.expert_id for e in self.pool])
        return self._candidates

    def _score_candidates(self):
        from .analysis import build_record

        if self._record is None:
            self._record = build_record(self.sample, self.predictions(), self.pool, self.candidates)
        return self._record

    @property
    def record(self):
        return self._score_candidates()

    def depth_for(self, solution: Solution) -> DepthMap:
        return solution_depth(solution, {e: self.prediction(e) for e in solution.experts})

    def metrics_for(self, solution: Solution) -> MetricSet:
        m = self._metric_cache.get(solution)
        if m is None:
            m = compute_metrics(self.depth_for(solution), self.sample.gt)
            self._metric_cache[solution] = m
        return m

    def oracle(self) -> tuple[Solution, MetricSet]:
        sol = self.record.oracle
        return sol, self.metrics_for(sol)

    def best_single(self) -> tuple[Solution, MetricSet]:
        sol = single(self.record.best_single)
        return sol, self.metrics_for(sol)


@dataclass(frozen=True)
class EpisodeState:
    prepared: PreparedSample = field(compare=False, repr=False)
    turn: int = 0
    camera_estimate: CameraLabel | None = None
    called: tuple = ()  # ((expert_id, AuxFeatures), ...) in call order
    finalized: Solution | None = None
    final_depth: DepthMap | None = field(default=None, compare=False, repr=False)
    actions: tuple = ()
    valid: bool = True
    forced: bool = False

    @property
    def called_ids(self) -> tuple[str, ...]:
        return tuple(eid for eid, _ in self.called)

    @property
    def done(self) -> bool:
        return self.finalized is not None


class IllegalActionError(ValueError):
    pass


class AgentEnv:
    """Episode dynamics over a fixed expert pool.

    The policy-visible action set is ``CallExpert(e)`` for each pool expert
    (in pool order) followed by ``Finalize(s)`` for each fusion strategy.
    """

    def __init__(self, pool: list[ExpertProfile], max_turns: int = MAX_TURNS):
        if max_turns < 2:
            raise ValueError("max_turns must leave room for at least one policy action")
        self.pool = pool
        self.pool_ids = tuple(e.expert_id for e in pool)
        self.max_turns = max_turns
        self.actions = tuple(call(e) for e in self.pool_ids) + tuple(finalize(s) for s in FINALIZE_STRATEGIES)
        self.n_actions = len(self.actions)
        self.feature_dim = 2 + 3 + len(pool) + 5 * len(pool) + 1

    def reset(self, prepared: PreparedSample) -> EpisodeState:
        state = EpisodeState(prepared)
        # The camera-type tool always runs first and carries no decision.
        return replace(state, turn=1, camera_estimate=prepared.sample.observed_camera,
                       actions=(ESTIMATE_CAMERA,))

    def is_legal(self, state: EpisodeState, action: Action) -> bool:
        if state.done or state.turn >= self.max_turns:
            return False
        n_called = len(state.called)
        if action.kind is ActionKind.ESTIMATE_CAMERA:
            return state.camera_estimate is None
        if action.kind is ActionKind.CALL_EXPERT:
            return action.expert_id in self.pool_ids and action.expert_id not in state.called_ids
        if action.strategy is FusionStrategy.IDENTITY:
            return n_called == 1
        return n_called >= 2

    def legal_actions(self, state: EpisodeState) -> np.ndarray:
        return np.array([self.is_legal(state, a) for a in self.actions], dtype=bool)

    def _finalize(self, state: EpisodeState, strategy: FusionStrategy, **extra) -> EpisodeState:
        sol = Solution(state.called_ids, strategy)
        depth = state.prepared.depth_for(sol)
        return replace(state, finalized=sol, final_depth=depth, **extra)

    def _force_finish(self, state: EpisodeState) -> EpisodeState:
        state = replace(state, valid=False, forced=True)
        if not state.called:
            first = self.pool_ids[0]
            aux = state.prepared.prediction(first).aux
            state = replace(state, called=((first, aux),), actions=state.actions + (call(first),))
        strategy = FusionStrategy.IDENTITY if len(state.called) == 1 else FusionStrategy.MEAN
        return self._finalize(state, strategy)

    def step(self, state: EpisodeState, action: Action) -> EpisodeState:
        """Apply ``action``; illegal actions invalidate and force-finish the episode."""
        if state.done:
            raise IllegalActionError("episode already finalized")
        if not self.is_legal(state, action):
            return self._force_finish(replace(state, actions=state.actions + (action,)))
        turn = state.turn + 1
        actions = state.actions + (action,)
        if action.kind is ActionKind.ESTIMATE_CAMERA:
            state = replace(state, turn=turn, actions=actions,
                            camera_estimate=state.prepared.sample.observed_camera)
        elif action.kind is ActionKind.CALL_EXPERT:
            aux = state.prepared.prediction(action.expert_id).aux
            state = replace(state, turn=turn, actions=actions, called=state.called + ((action.expert_id, aux),))
        else:
            return self._finalize(replace(state, turn=turn, actions=actions), action.strategy)
        if state.turn >= self.max_turns:
            return self._force_finish(state)
        return state

    def featurize(self, state: EpisodeState) -> np.ndarray:
        """Fixed-length encoding: scene one-hot, camera one-hot(+unknown), call flags,
        per-expert aux blocks (depths scaled by 1/100 m) and the normalised turn."""
        x = np.zeros(self.feature_dim)
        sample = state.prepared.sample
        x[0 if sample.observed_scene is Scene.INDOOR else 1] = 1.0
        cam = state.camera_estimate
        x[2 if cam is CameraLabel.PERSPECTIVE else 3 if cam is CameraLabel.ERP else 4] = 1.0
        n = len(self.pool_ids)
        flags = 5
        aux0 = flags + n
        index = {eid: i for i, eid in enumerate(self.pool_ids)}
        for eid, aux in state.called:
            i = index[eid]
            x[flags + i] = 1.0
            x[aux0 + 5 * i: aux0 + 5 * i + 5] = [
                aux.mean_depth / AUX_DEPTH_SCALE,
                aux.std_depth / AUX_DEPTH_SCALE,
                aux.min_depth / AUX_DEPTH_SCALE,
                aux.max_depth / AUX_DEPTH_SCALE,
                aux.valid_fraction,
            ]
        x[-1] = state.turn / self.max_turns
        return x
