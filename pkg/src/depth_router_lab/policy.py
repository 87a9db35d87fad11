"""Linear-softmax routing policy and the GRPO trainer with multi-reward group normalisation."""

from __future__ import annotations

import enum
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .depth import MetricSet, mean_metrics
from .env import FEATURE_LAYOUT_VERSION, ActionKind, AgentEnv, PreparedSample
from .fusion import Solution
from .rewards import (ERP_REWARDS, PERSPECTIVE_REWARDS, REWARD_CHANNELS, ReferencePolicy, RewardConfig,
                      RewardVector, efficiency_metric_reward, scene_reward, selection_prior_reward,
                      validity_reward)
from .scenes import CameraDomain, CameraLabel, Scene
from .seeding import substream

log = logging.getLogger(__name__)

SCENE_LABELS = (Scene.INDOOR, Scene.OUTDOOR)


class Mode(str, enum.Enum):
    STOCHASTIC = "stochastic"
    GREEDY = "greedy"


class StdMode(str, enum.Enum):
    POPULATION = "population"
    SAMPLE = "sample"


@dataclass
class PolicyParams:
    """Logit weights: rows ``0..n_actions-1`` score episode actions, the last two the scene head."""

    W: np.ndarray
    b: np.ndarray

    @classmethod
    def zeros(cls, n_actions: int, feature_dim: int) -> "PolicyParams":
        rows = n_actions + len(SCENE_LABELS)
        return cls(np.zeros((rows, feature_dim)), np.zeros(rows))

    @property
    def n_actions(self) -> int:
        return self.W.shape[0] - len(SCENE_LABELS)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.W.copy(), self.b.copy())

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.W @ x + self.b

    def to_json(self) -> dict:
        return {"feature_layout_version": FEATURE_LAYOUT_VERSION, "W": self.W.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "PolicyParams":
        if d.get("feature_layout_version") != FEATURE_LAYOUT_VERSION:
            raise ValueError(f"policy feature layout {d.get('feature_layout_version')} != {FEATURE_LAYOUT_VERSION}")
        W = np.asarray(d["W"], dtype=float)
        b = np.asarray(d["b"], dtype=float)
        if W.ndim != 2 or b.shape != (W.shape[0],) or not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise ValueError("malformed policy parameters")
        return cls(W, b)


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    learning_rate: float = 0.01
    clip_eps: float = 0.2
    kl_coeff: float = 0.0
    epochs_per_batch: int = 1
    steps: int = 300
    batch_samples: int = 4
    std_mode: StdMode = StdMode.POPULATION
    adv_eps: float = 1e-8
    channels: tuple = REWARD_CHANNELS

    def __post_init__(self):
        object.__setattr__(self, "std_mode", StdMode(self.std_mode))
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be positive")
        if self.steps < 0 or self.batch_samples < 1 or self.epochs_per_batch < 1:
            raise ValueError("steps, batch_samples and epochs_per_batch must be positive")
        bad = set(self.channels) - set(REWARD_CHANNELS)
        if bad:
            raise ValueError(f"unknown reward channels {sorted(bad)}")


@dataclass(frozen=True)
class RewardSchedule:
    """Reward hyperparameters keyed by the true coarse camera type of a sample."""

    perspective_like: RewardConfig = PERSPECTIVE_REWARDS
    erp_like: RewardConfig = ERP_REWARDS

    def for_domain(self, domain: CameraDomain) -> RewardConfig:
        return self.perspective_like if CameraDomain(domain).coarse is CameraLabel.PERSPECTIVE else self.erp_like

    @classmethod
    def uniform(cls, cfg: RewardConfig) -> "RewardSchedule":
        return cls(cfg, cfg)


# --- distributions -----------------------------------------------------------

def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities with ``-inf`` on masked-out entries (works row-wise on 2-D input)."""
    if not np.all(np.any(mask, axis=-1)):
        raise ValueError("no legal action")
    z = np.where(mask, logits, -np.inf)
    top = np.max(z, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        shifted = z - top
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    return np.where(mask, shifted - lse, -np.inf)


def action_distribution(policy: PolicyParams, features: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Probabilities over the episode actions; illegal actions get exactly 0."""
    mask = np.asarray(mask, dtype=bool)
    logits = policy.logits(features)[: policy.n_actions]
    return np.exp(masked_log_softmax(logits, mask))


def scene_distribution(policy: PolicyParams, features: np.ndarray) -> np.ndarray:
    logits = policy.logits(features)[policy.n_actions:]
    return np.exp(masked_log_softmax(logits, np.ones(len(SCENE_LABELS), dtype=bool)))


def _choose(probs: np.ndarray, rng: np.random.Generator | None) -> int:
    if rng is None:
        return int(np.argmax(probs))  # first maximal index
    u = rng.random()
    cdf = np.cumsum(probs)
    a = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(a, int(np.flatnonzero(probs)[-1]))


# --- rollouts ----------------------------------------------------------------

@dataclass
class Rollout:
    sample_id: str
    domain: CameraDomain
    actions: list
    action_indices: list
    features: np.ndarray  # (T, D)
    masks: np.ndarray  # (T, n_actions)
    old_logp: np.ndarray  # (T, n_actions), -inf where illegal
    scene_features: np.ndarray
    scene_index: int
    scene_old_logp: np.ndarray
    solution: Solution
    metrics: MetricSet
    camera_estimate: CameraLabel
    valid: bool
    forced: bool
    tool_calls: int
    rewards: RewardVector | None = None
    final_depth: object = field(default=None, repr=False)

    @property
    def scene_prediction(self) -> Scene:
        return SCENE_LABELS[self.scene_index]

    @property
    def n_experts(self) -> int:
        return self.solution.size

    def to_json(self) -> dict:
        d = {
            "sample_id": self.sample_id,
            "domain": self.domain.value,
            "actions": [a.to_json() for a in self.actions],
            "solution": self.solution.to_json(),
            "scene_prediction": self.scene_prediction.value,
            "camera_estimate": self.camera_estimate.value,
            "valid": self.valid,
            "metrics": self.metrics.as_dict(),
            "tool_calls": self.tool_calls,
            "solution_size": self.n_experts,
        }
        if self.rewards is not None:
            d["rewards"] = self.rewards.as_dict()
        return d


def sample_rollout(policy: PolicyParams, env: AgentEnv, prepared: PreparedSample,
                   rng: np.random.Generator | None = None, mode: Mode = Mode.STOCHASTIC,
                   keep_depth: bool = False) -> Rollout:
    """Run one episode. Greedy mode takes the lowest-index argmax and ignores ``rng``.

    The scene head is read at the post-reset state: sampled in stochastic mode so
    it can be trained, argmax in greedy mode.
    """
    mode = Mode(mode)
    if mode is Mode.STOCHASTIC and rng is None:
        raise ValueError("stochastic rollouts need an rng")
    pick_rng = rng if mode is Mode.STOCHASTIC else None
    n_act = policy.n_actions
    state = env.reset(prepared)
    x0 = env.featurize(state)
    scene_lp = masked_log_softmax(policy.logits(x0)[n_act:], np.ones(len(SCENE_LABELS), dtype=bool))
    scene_idx = _choose(np.exp(scene_lp), pick_rng)

    feats, masks, logps, chosen = [], [], [], []
    while not state.done:
        x = env.featurize(state)
        mask = env.legal_actions(state)
        lp = masked_log_softmax(policy.logits(x)[:n_act], mask)
        a = _choose(np.exp(lp), pick_rng)
        feats.append(x)
        masks.append(mask)
        logps.append(lp)
        chosen.append(a)
        state = env.step(state, env.actions[a])

    sol = state.finalized
    return Rollout(
        sample_id=prepared.sample_id,
        domain=prepared.domain,
        actions=list(state.actions),
        action_indices=chosen,
        features=np.array(feats),
        masks=np.array(masks),
        old_logp=np.array(logps),
        scene_features=x0,
        scene_index=scene_idx,
        scene_old_logp=scene_lp,
        solution=sol,
        metrics=prepared.metrics_for(sol),
        camera_estimate=state.camera_estimate,
        valid=state.valid,
        forced=state.forced,
        tool_calls=sum(a.kind is ActionKind.CALL_EXPERT for a in state.actions),
        final_depth=state.final_depth if keep_depth else None,
    )


def reference_for(prepared: PreparedSample, cfg: RewardConfig) -> tuple[Solution, MetricSet]:
    if cfg.reference_policy is ReferencePolicy.ORACLE:
        return prepared.oracle()
    return prepared.best_single()


def score_rollout(rollout: Rollout, prepared: PreparedSample, cfg: RewardConfig) -> RewardVector:
    sample = prepared.sample
    ref_sol, ref_metrics = reference_for(prepared, cfg)
    n_called = len(rollout.solution.experts)
    r_valid = validity_reward(rollout.valid and not rollout.forced, n_called, rollout.solution)
    r_scene = scene_reward((rollout.scene_prediction.value, rollout.camera_estimate.value),
                           (sample.spec.scene.value, sample.domain.coarse.value))
    r_sel = selection_prior_reward(rollout.solution, sample.domain, prepared.pool)
    r_em = efficiency_metric_reward(rollout.metrics.delta1, ref_metrics.delta1,
                                    rollout.solution.size, ref_sol.size, cfg)
    return RewardVector(r_valid, r_scene, r_sel, r_em)


# --- advantages and surrogate ------------------------------------------------

def channel_advantages(rewards, cfg: GrpoConfig) -> np.ndarray:
    """Per-channel group-normalised advantages, shape ``(G, K)``.

    A channel whose group std falls below ``adv_eps`` contributes zeros.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 2 or r.shape[0] < 2:
        raise ValueError("rewards must be a (G, K) matrix with G >= 2")
    ddof = 0 if cfg.std_mode is StdMode.POPULATION else 1
    mean = r.mean(axis=0)
    std = r.std(axis=0, ddof=ddof)
    live = std >= cfg.adv_eps
    out = np.zeros_like(r)
    out[:, live] = (r[:, live] - mean[live]) / std[live]
    return out


def group_advantages(rewards, cfg: GrpoConfig) -> np.ndarray:
    """Sum over channels of the per-channel normalised advantages."""
    return channel_advantages(rewards, cfg).sum(axis=1)


@dataclass
class StepBatch:
    """Flattened decision steps of a batch of rollout groups."""

    X: np.ndarray  # (N, D)
    mask: np.ndarray  # (N, R) over all logit rows
    action: np.ndarray  # (N,) row index
    old_logp: np.ndarray  # (N, R)
    adv: np.ndarray  # (N,)
    weight: np.ndarray  # (N,)


def build_step_batch(groups: list, n_actions: int) -> StepBatch:
    """``groups`` holds ``(rollouts, total_adv, scene_adv)`` per sample.

    Each rollout contributes its action steps (advantage = total) plus one
    scene-head step (advantage = scene channel), all weighted ``1/(n_groups*G*T_i)``.
    """
    rows = n_actions + len(SCENE_LABELS)
    X, M, A, OL, ADV, WT = [], [], [], [], [], []
    n_groups = len(groups)
    for rollouts, adv, scene_adv in groups:
        G = len(rollouts)
        for ro, a_i, s_i in zip(rollouts, adv, scene_adv):
            T = len(ro.action_indices) + 1
            w = 1.0 / (n_groups * G * T)
            for t, a in enumerate(ro.action_indices):
                m = np.zeros(rows, dtype=bool)
                m[:n_actions] = ro.masks[t]
                ol = np.full(rows, -np.inf)
                ol[:n_actions] = ro.old_logp[t]
                X.append(ro.features[t]); M.append(m); A.append(a); OL.append(ol); ADV.append(a_i); WT.append(w)
            m = np.zeros(rows, dtype=bool)
            m[n_actions:] = True
            ol = np.full(rows, -np.inf)
            ol[n_actions:] = ro.scene_old_logp
            X.append(ro.scene_features); M.append(m); A.append(n_actions + ro.scene_index)
            OL.append(ol); ADV.append(s_i); WT.append(w)
    return StepBatch(np.array(X), np.array(M), np.array(A, dtype=int), np.array(OL),
                     np.array(ADV, dtype=float), np.array(WT))


def _step_terms(policy: PolicyParams, batch: StepBatch, cfg: GrpoConfig):
    logits = batch.X @ policy.W.T + policy.b
    logp = masked_log_softmax(logits, batch.mask)
    idx = np.arange(len(batch.action))
    lp_a = logp[idx, batch.action]
    old_a = batch.old_logp[idx, batch.action]
    ratio = np.exp(lp_a - old_a)
    unclipped = ratio * batch.adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * batch.adv
    p = np.exp(logp)
    with np.errstate(invalid="ignore"):
        log_gap = np.where(batch.mask, logp - batch.old_logp, 0.0)
    kl = np.sum(p * log_gap, axis=1)
    return logp, p, ratio, unclipped, clipped, log_gap, kl


def surrogate(policy: PolicyParams, batch: StepBatch, cfg: GrpoConfig) -> float:
    """Clipped GRPO objective (to be maximised) minus the KL-to-old penalty."""
    _, _, _, unclipped, clipped, _, kl = _step_terms(policy, batch, cfg)
    return float(np.sum(batch.weight * (np.minimum(unclipped, clipped) - cfg.kl_coeff * kl)))


def surrogate_grad(policy: PolicyParams, batch: StepBatch, cfg: GrpoConfig) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of :func:`surrogate` with respect to ``(W, b)``."""
    logp, p, ratio, unclipped, clipped, log_gap, kl = _step_terms(policy, batch, cfg)
    active = unclipped <= clipped
    coef = batch.weight * np.where(active, ratio * batch.adv, 0.0)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(batch.action)), batch.action] = 1.0
    g = coef[:, None] * (onehot - p)
    if cfg.kl_coeff:
        g -= cfg.kl_coeff * batch.weight[:, None] * p * (log_gap - kl[:, None])
    g = np.where(batch.mask, g, 0.0)
    return g.T @ batch.X, g.sum(axis=0)


def grpo_update(policy: PolicyParams, batch: StepBatch, cfg: GrpoConfig) -> tuple[PolicyParams, bool]:
    """``epochs_per_batch`` gradient-ascent steps on the surrogate.

    Returns the new parameters and whether the update was applied; a
    non-finite gradient leaves the parameters untouched.
    """
    new = policy.copy()
    for _ in range(cfg.epochs_per_batch):
        with np.errstate(all="ignore"):  # checked just below
            gW, gb = surrogate_grad(new, batch, cfg)
        if not (np.isfinite(gW).all() and np.isfinite(gb).all()):
            log.warning("non-finite policy gradient; skipping update")
            return policy, False
        new.W += cfg.learning_rate * gW
        new.b += cfg.learning_rate * gb
    return new, True


# --- training ----------------------------------------------------------------

TRAINLOG_FIELDS = ("step", "r_validity", "r_scene", "r_sel", "r_em", "mean_abs_adv", "mean_delta1",
                   "mean_tool_calls", "mean_solution_size", "entropy", "updated")


def _mean_entropy(rollouts: list[Rollout]) -> float:
    ents = []
    for ro in rollouts:
        lp = ro.old_logp
        p = np.exp(lp)
        with np.errstate(invalid="ignore"):
            ents.extend(-np.sum(np.where(p > 0, p * lp, 0.0), axis=1))
    return float(np.mean(ents)) if ents else 0.0


def train(env: AgentEnv, train_set: list[PreparedSample], schedule: RewardSchedule, cfg: GrpoConfig,
          seed: int, policy: PolicyParams | None = None, rollout_log: list | None = None):
    """GRPO loop: per step draw ``batch_samples`` samples, ``G`` rollouts each, score,
    normalise within each group and update. Deterministic given ``seed``."""
    if policy is None:
        policy = PolicyParams.zeros(env.n_actions, env.feature_dim)
    trainlog: list[dict] = []
    if cfg.steps == 0:
        return policy, trainlog
    if len(train_set) < cfg.batch_samples:
        raise ValueError("training set smaller than the batch size")
    chan_idx = [REWARD_CHANNELS.index(c) for c in cfg.channels]
    scene_col = cfg.channels.index("scene") if "scene" in cfg.channels else None
    batch_rng = substream(seed, "train-batches")
    for step in range(cfg.steps):
        picks = batch_rng.choice(len(train_set), size=cfg.batch_samples, replace=False)
        groups, all_rollouts, abs_adv, reward_rows = [], [], [], []
        for slot, k in enumerate(sorted(int(i) for i in picks)):
            prepared = train_set[k]
            rcfg = schedule.for_domain(prepared.domain)
            rollouts = []
            for g in range(cfg.group_size):
                rng = substream(seed, "rollout", step, slot, g)
                ro = sample_rollout(policy, env, prepared, rng, Mode.STOCHASTIC)
                ro.rewards = score_rollout(ro, prepared, rcfg)
                rollouts.append(ro)
            R = np.array([ro.rewards.as_tuple() for ro in rollouts])[:, chan_idx]
            per_chan = channel_advantages(R, cfg)
            total = per_chan.sum(axis=1)
            scene_adv = per_chan[:, scene_col] if scene_col is not None else np.zeros(len(rollouts))
            groups.append((rollouts, total, scene_adv))
            all_rollouts.extend(rollouts)
            abs_adv.extend(np.abs(total))
            reward_rows.extend(ro.rewards.as_tuple() for ro in rollouts)
            if rollout_log is not None:
                for ro in rollouts:
                    rec = ro.to_json()
                    rec["step"] = step
                    rollout_log.append(rec)
        batch = build_step_batch(groups, env.n_actions)
        policy, updated = grpo_update(policy, batch, cfg)
        means = np.mean(reward_rows, axis=0)
        trainlog.append({
            "step": step,
            "r_validity": float(means[0]),
            "r_scene": float(means[1]),
            "r_sel": float(means[2]),
            "r_em": float(means[3]),
            "mean_abs_adv": float(np.mean(abs_adv)),
            "mean_delta1": float(np.mean([ro.metrics.delta1 for ro in all_rollouts])),
            "mean_tool_calls": float(np.mean([ro.tool_calls for ro in all_rollouts])),
            "mean_solution_size": float(np.mean([ro.n_experts for ro in all_rollouts])),
            "entropy": _mean_entropy(all_rollouts),
            "updated": int(updated),
        })
    return policy, trainlog


# --- evaluation --------------------------------------------------------------

@dataclass
class EvalResult:
    rollouts: list
    group_metrics: dict  # CameraDomain -> MetricSet
    group_n_bar: dict  # CameraDomain -> float
    n_bar: float
    solution_freq: dict  # CameraDomain -> Counter of solution keys

    @property
    def mean_delta1(self) -> float:
        return float(np.mean([ro.metrics.delta1 for ro in self.rollouts]))


def summarize(rollouts: list[Rollout]) -> EvalResult:
    by_group: dict = {}
    for ro in rollouts:
        by_group.setdefault(ro.domain, []).append(ro)
    order = [d for d in CameraDomain if d in by_group]
    return EvalResult(
        rollouts=rollouts,
        group_metrics={d: mean_metrics([r.metrics for r in by_group[d]]) for d in order},
        group_n_bar={d: float(np.mean([r.n_experts for r in by_group[d]])) for d in order},
        n_bar=float(np.mean([r.n_experts for r in rollouts])) if rollouts else math.nan,
        solution_freq={d: Counter(r.solution.key() for r in by_group[d]) for d in order},
    )


def evaluate(policy: PolicyParams, env: AgentEnv, dataset: list[PreparedSample]) -> EvalResult:
    """Greedy rollouts on every sample, aggregated per camera-domain group."""
    return summarize([sample_rollout(policy, env, p, mode=Mode.GREEDY) for p in dataset])
