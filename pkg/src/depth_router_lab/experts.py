"""Simulated depth experts with family- and domain-dependent error models."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .depth import DepthMap
from .scenes import CameraDomain, Sample
from .seeding import substream


class Family(str, enum.Enum):
    PERSPECTIVE = "perspective"
    ERP = "erp"

    def matches(self, domain: CameraDomain) -> bool:
        """Whether this family is the preferred one for ``domain``."""
        if self is Family.PERSPECTIVE:
            return domain in (CameraDomain.PERSPECTIVE, CameraDomain.ERP_VARIANT)
        return domain in (CameraDomain.NATIVE_ERP, CameraDomain.FISHEYE)


def preferred_family(domain: CameraDomain) -> Family:
    return Family.PERSPECTIVE if Family.PERSPECTIVE.matches(domain) else Family.ERP


@dataclass(frozen=True)
class ErrorParams:
    log_bias: float = 0.0
    log_noise_sigma: float = 0.0
    correlation_cycles: float = 2.0
    outlier_rate: float = 0.0
    outlier_log_scale: float = math.log(3.0)

    def __post_init__(self):
        if self.log_noise_sigma < 0:
            raise ValueError("log_noise_sigma must be nonnegative")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValueError("outlier_rate must lie in [0, 1]")
        if self.correlation_cycles <= 0:
            raise ValueError("correlation_cycles must be positive")
        for name in ("log_bias", "log_noise_sigma", "correlation_cycles", "outlier_log_scale"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class ExpertProfile:
    expert_id: str
    family: Family
    params: dict = field(hash=False)
    family_corr: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "params", {CameraDomain(k): v for k, v in self.params.items()})
        if not 0.0 <= self.family_corr < 1.0 + 1e-12:
            raise ValueError("family_corr must lie in [0, 1]")

    def params_for(self, domain: CameraDomain) -> ErrorParams:
        try:
            return self.params[CameraDomain(domain)]
        except KeyError:
            raise KeyError(f"expert {self.expert_id!r} has no error parameters for domain {domain.value!r}") from None

    def to_json(self) -> dict:
        return {
            "expert_id": self.expert_id,
            "family": self.family.value,
            "family_corr": self.family_corr,
            "domains": {d.value: vars(p).copy() for d, p in self.params.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "ExpertProfile":
        return cls(
            expert_id=d["expert_id"],
            family=Family(d["family"]),
            family_corr=float(d.get("family_corr", 0.4)),
            params={CameraDomain(k): ErrorParams(**v) for k, v in d["domains"].items()},
        )


@dataclass(frozen=True)
class AuxFeatures:
    mean_depth: float
    std_depth: float
    min_depth: float
    max_depth: float
    valid_fraction: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mean_depth, self.std_depth, self.min_depth, self.max_depth, self.valid_fraction])


@dataclass(frozen=True, eq=False)
class ExpertPrediction:
    expert_id: str
    depth: DepthMap
    aux: AuxFeatures


def extract_aux(depth: DepthMap) -> AuxFeatures:
    v = depth.values[depth.valid]
    if v.size == 0:
        raise ValueError("no valid pixels to summarise")
    mean = float(np.mean(v))
    lo, hi = float(v.min()), float(v.max())
    return AuxFeatures(
        mean_depth=min(max(mean, lo), hi),
        std_depth=float(np.std(v)),
        min_depth=lo,
        max_depth=hi,
        valid_fraction=v.size / depth.valid.size,
    )


@lru_cache(maxsize=64)
def _filter_gain(height: int, width: int, sigma: float) -> float:
    impulse = np.zeros((height, width))
    impulse[0, 0] = 1.0
    h = ndimage.gaussian_filter(impulse, sigma, mode="wrap")
    return float(np.sqrt(np.sum(h * h)))


def smooth_field(noise: np.ndarray, cycles: float) -> np.ndarray:
    """Gaussian-smoothed white noise with unit expected variance per pixel.

    ``cycles`` sets the blob count across the longer image side; the per-image
    mean is not removed, so low-cycle fields carry sample-level offsets.
    """
    height, width = noise.shape
    sigma = max(height, width) / (4.0 * cycles)
    return ndimage.gaussian_filter(noise, sigma, mode="wrap") / _filter_gain(height, width, sigma)


def predict(expert: ExpertProfile, sample: Sample, rng: np.random.Generator | None = None) -> ExpertPrediction:
    """Simulated prediction: ground truth times a smooth log-space error field.

    The error mixes a field shared by the expert's family on this sample with
    a private one, plus sparse multiplicative outliers. With ``rng=None`` the
    private stream is derived from ``(sample seed, expert_id)``.
    """
    p = expert.params_for(sample.domain)
    gt = sample.gt
    shape = gt.shape
    seed = sample.spec.seed
    if rng is None:
        rng = substream(seed, "expert", expert.expert_id)

    log_err = np.full(shape, p.log_bias)
    if p.log_noise_sigma > 0:
        fam_noise = substream(seed, "family", expert.family.value).standard_normal(shape)
        own_noise = rng.standard_normal(shape)
        rho = expert.family_corr
        mixed = math.sqrt(rho) * smooth_field(fam_noise, p.correlation_cycles)
        if rho < 1.0:
            mixed = mixed + math.sqrt(1.0 - rho) * smooth_field(own_noise, p.correlation_cycles)
        log_err = log_err + p.log_noise_sigma * mixed
    n_out = int(round(p.outlier_rate * gt.values.size))
    if n_out:
        idx = rng.choice(gt.values.size, size=n_out, replace=False)
        signs = rng.choice((-1.0, 1.0), size=n_out)
        flat = log_err.reshape(-1)
        flat[idx] += signs * p.outlier_log_scale

    values = gt.values * np.exp(log_err)
    depth = DepthMap(values, gt.valid)
    return ExpertPrediction(expert.expert_id, depth, extract_aux(depth))


def _params(bias, sigma, cycles=2.0, outliers=0.01):
    return ErrorParams(bias, sigma, cycles, outliers, math.log(3.0))


def default_pool() -> list[ExpertProfile]:
    """Five-expert preset: three perspective-family experts and two ERP-family ones.

    Perspective experts are sharp on perspective and ERP-variant inputs and
    degrade on native panoramas and fisheye; ``erp_a`` is the reverse;
    ``erp_gen`` is a generalist that is decent everywhere.
    """
    P, V, N, F = (CameraDomain.PERSPECTIVE, CameraDomain.ERP_VARIANT,
                  CameraDomain.NATIVE_ERP, CameraDomain.FISHEYE)
    persp = [
        ("persp_a", {P: _params(0.04, 0.13), V: _params(0.05, 0.15), N: _params(0.22, 0.26), F: _params(0.20, 0.26)}),
        ("persp_b", {P: _params(-0.05, 0.14), V: _params(-0.06, 0.16), N: _params(-0.24, 0.27), F: _params(-0.22, 0.27)}),
        ("persp_c", {P: _params(0.02, 0.15), V: _params(0.03, 0.17), N: _params(0.20, 0.28), F: _params(0.24, 0.28)}),
    ]
    erp = [
        ("erp_a", {P: _params(0.18, 0.24), V: _params(0.16, 0.23), N: _params(0.04, 0.12), F: _params(0.05, 0.13)}),
        ("erp_gen", {P: _params(-0.08, 0.17), V: _params(-0.07, 0.18), N: _params(-0.05, 0.14), F: _params(-0.06, 0.15)}),
    ]
    pool = [ExpertProfile(eid, Family.PERSPECTIVE, params) for eid, params in persp]
    pool += [ExpertProfile(eid, Family.ERP, params) for eid, params in erp]
    return pool


def pool_to_json(pool: list[ExpertProfile]) -> dict:
    return {"experts": [e.to_json() for e in pool]}


def pool_from_json(d: dict) -> list[ExpertProfile]:
    pool = [ExpertProfile.from_json(e) for e in d["experts"]]
    ids = [e.expert_id for e in pool]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate expert ids in pool")
    return pool


def load_pool(path) -> list[ExpertProfile]:
    with open(path) as fh:
        return pool_from_json(json.load(fh))
