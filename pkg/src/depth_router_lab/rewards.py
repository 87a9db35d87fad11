"""Reward channels scored on each rollout."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .experts import ExpertProfile
from .fusion import Solution
from .scenes import CameraDomain, CameraLabel, Scene

REWARD_CHANNELS = ("validity", "scene", "sel", "em")


class ReferencePolicy(str, enum.Enum):
    ORACLE = "oracle"
    BEST_SINGLE = "best_single"


@dataclass(frozen=True)
class RewardConfig:
    lam: float = 0.2
    tau: float = 3.4
    eps: float = 1e-8
    n_max: int = 2
    reference_policy: ReferencePolicy = ReferencePolicy.ORACLE

    def __post_init__(self):
        object.__setattr__(self, "reference_policy", ReferencePolicy(self.reference_policy))
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be a positive integer")

    def to_json(self) -> dict:
        return {"lambda": self.lam, "tau": self.tau, "eps": self.eps, "n_max": self.n_max,
                "reference_policy": self.reference_policy.value}

    @classmethod
    def from_json(cls, d: dict) -> "RewardConfig":
        unknown = set(d) - {"lambda", "tau", "eps", "n_max", "reference_policy"}
        if unknown:
            raise ValueError(f"unknown reward config keys: {sorted(unknown)}")
        base = cls()
        return cls(
            lam=float(d.get("lambda", base.lam)),
            tau=float(d.get("tau", base.tau)),
            eps=float(d.get("eps", base.eps)),
            n_max=int(d.get("n_max", base.n_max)),
            reference_policy=ReferencePolicy(d.get("reference_policy", base.reference_policy.value)),
        )


# Per camera-type defaults used in training.
PERSPECTIVE_REWARDS = RewardConfig(lam=1.0, tau=0.1)
ERP_REWARDS = RewardConfig(lam=0.2, tau=3.4)


@dataclass(frozen=True)
class RewardVector:
    validity: float
    scene: float
    sel: float
    em: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.validity, self.scene, self.sel, self.em)

    def as_dict(self) -> dict:
        return dict(zip(REWARD_CHANNELS, self.as_tuple()))


def _label(value, enum_cls):
    try:
        return enum_cls(value)
    except ValueError:
        return None


def scene_reward(predicted: tuple, truth: tuple) -> float:
    """Mean accuracy over the (scene, camera) label pair; unknown tokens earn nothing."""
    scene_ok = _label(predicted[0], Scene) is not None and _label(predicted[0], Scene) == Scene(truth[0])
    cam_ok = _label(predicted[1], CameraLabel) is not None and _label(predicted[1], CameraLabel) == CameraLabel(truth[1])
    return (float(scene_ok) + float(cam_ok)) / 2.0


def selection_prior_reward(solution: Solution, domain: CameraDomain, pool: list[ExpertProfile]) -> float:
    """1.0 when some selected expert's family is the one preferred for ``domain``."""
    fam = {e.expert_id: e.family for e in pool}
    solution.check_pool(fam)
    return 1.0 if any(fam[e].matches(CameraDomain(domain)) for e in solution.experts) else 0.0


def efficiency_metric_reward(m_i: float, m_ref: float, n_i: int, n_ref: int, cfg: RewardConfig) -> float:
    """Relative metric gap minus a call penalty that fades as the metric gap grows."""
    dm = (m_i - m_ref) / (abs(m_ref) + cfg.eps)
    dn = (n_i - n_ref) / cfg.n_max
    return dm - cfg.lam * dn * math.exp(-abs(dm) / cfg.tau)


def validity_reward(finalized_voluntarily: bool, experts_called: int, solution: Solution | None) -> float:
    return 1.0 if finalized_voluntarily and experts_called >= 1 and solution is not None else 0.0
