"""Synthetic ground-truth scenes across camera domains, with noisy context labels."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .depth import DepthMap
from .seeding import derive_seed, substream

N_COSINES = 24
INDOOR_RANGE = (0.5, 10.0)
OUTDOOR_RANGE = (1.0, 80.0)


class CameraDomain(str, enum.Enum):
    PERSPECTIVE = "perspective"
    ERP_VARIANT = "erp_variant"
    NATIVE_ERP = "native_erp"
    FISHEYE = "fisheye"

    @property
    def coarse(self) -> "CameraLabel":
        """The two-way camera label a camera-type tool would report."""
        if self in (CameraDomain.PERSPECTIVE, CameraDomain.ERP_VARIANT):
            return CameraLabel.PERSPECTIVE
        return CameraLabel.ERP


class CameraLabel(str, enum.Enum):
    PERSPECTIVE = "perspective_like"
    ERP = "erp_like"

    def flipped(self) -> "CameraLabel":
        return CameraLabel.ERP if self is CameraLabel.PERSPECTIVE else CameraLabel.PERSPECTIVE


class Scene(str, enum.Enum):
    INDOOR = "indoor"
    OUTDOOR = "outdoor"

    def flipped(self) -> "Scene":
        return Scene.OUTDOOR if self is Scene.INDOOR else Scene.INDOOR

    @property
    def default_range(self) -> tuple[float, float]:
        return INDOOR_RANGE if self is Scene.INDOOR else OUTDOOR_RANGE


@dataclass(frozen=True)
class SceneSpec:
    domain: CameraDomain
    scene: Scene
    seed: int
    width: int
    height: int
    depth_range: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "domain", CameraDomain(self.domain))
        object.__setattr__(self, "scene", Scene(self.scene))
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"degenerate raster size {self.width}x{self.height}")
        rng = self.scene.default_range if self.depth_range is None else tuple(map(float, self.depth_range))
        if not (0 < rng[0] < rng[1]):
            raise ValueError(f"invalid depth range {rng}")
        object.__setattr__(self, "depth_range", rng)
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_json(self) -> dict:
        return {
            "domain": self.domain.value,
            "scene": self.scene.value,
            "seed": int(self.seed),
            "width": self.width,
            "height": self.height,
            "depth_range": list(self.depth_range),
        }

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        return cls(
            domain=CameraDomain(d["domain"]),
            scene=Scene(d["scene"]),
            seed=int(d["seed"]),
            width=int(d["width"]),
            height=int(d["height"]),
            depth_range=tuple(d["depth_range"]),
        )


@dataclass(frozen=True, eq=False)
class Sample:
    spec: SceneSpec
    gt: DepthMap
    observed_scene: Scene
    observed_camera: CameraLabel
    sample_id: str

    @property
    def domain(self) -> CameraDomain:
        return self.spec.domain


def sample_id_for(spec: SceneSpec) -> str:
    return f"{spec.domain.value}-{int(spec.seed):016x}"


def cosine_field(rng: np.random.Generator, height: int, width: int, n_cosines: int = N_COSINES,
                 max_cycles: float = 4.0) -> np.ndarray:
    """Band-limited field: sum of random-phase 2-D cosines with 1/f amplitudes."""
    theta = rng.uniform(0.0, 2 * np.pi, n_cosines)
    cycles = rng.uniform(0.5, max_cycles, n_cosines)
    phase = rng.uniform(0.0, 2 * np.pi, n_cosines)
    y = (np.arange(height) + 0.5) / height
    x = (np.arange(width) + 0.5) / width
    kx = cycles * np.cos(theta)
    ky = cycles * np.sin(theta)
    # (n, H, W) is small for desk-scale rasters.
    arg = 2 * np.pi * (ky[:, None, None] * y[None, :, None] + kx[:, None, None] * x[None, None, :]) + phase[:, None, None]
    return np.tensordot(1.0 / cycles, np.cos(arg), axes=1)


def observe_labels(spec: SceneSpec, rng: np.random.Generator, p_scene: float = 0.05,
                   p_cam: float = 0.10) -> tuple[Scene, CameraLabel]:
    """Noisy scene and coarse camera labels; each flips independently with its probability."""
    for name, p in (("p_scene", p_scene), ("p_cam", p_cam)):
        if not 0.0 <= p < 0.5:
            raise ValueError(f"{name} must lie in [0, 0.5), got {p}")
    scene = spec.scene.flipped() if rng.random() < p_scene else spec.scene
    camera = spec.domain.coarse
    if rng.random() < p_cam:
        camera = camera.flipped()
    return scene, camera


def generate_scene(spec: SceneSpec, p_scene: float = 0.05, p_cam: float = 0.10,
                   n_cosines: int = N_COSINES) -> Sample:
    """Deterministic synthetic sample for ``spec``.

    Ground truth is ``exp`` of a cosine field mapped affinely onto a random
    log-depth sub-interval of ``spec.depth_range`` (at least half its log span).
    Values are rounded to float32 so rasters round-trip exactly.
    """
    rng = substream(spec.seed, "scene")
    f = cosine_field(rng, spec.height, spec.width, n_cosines)
    span = f.max() - f.min()
    f = (f - f.min()) / span if span > 0 else np.zeros_like(f)

    lo, hi = np.log(spec.depth_range[0]), np.log(spec.depth_range[1])
    width = (hi - lo) * rng.uniform(0.5, 1.0)
    start = lo + rng.uniform(0.0, (hi - lo) - width)
    gt = np.exp(start + width * f)
    gt = np.clip(gt, *spec.depth_range).astype(np.float32).astype(np.float64)

    scene, camera = observe_labels(spec, substream(spec.seed, "labels"), p_scene, p_cam)
    return Sample(spec, DepthMap.from_array(gt), scene, camera, sample_id_for(spec))


@dataclass(frozen=True)
class GroupConfig:
    """One dataset group: a camera domain with its sampling parameters."""

    domain: CameraDomain
    count: int = 200
    width: int = 64
    height: int = 48
    indoor_fraction: float = 1.0
    indoor_range: tuple[float, float] = INDOOR_RANGE
    outdoor_range: tuple[float, float] = OUTDOOR_RANGE
    p_scene: float = 0.05
    p_cam: float = 0.10

    def __post_init__(self):
        object.__setattr__(self, "domain", CameraDomain(self.domain))
        object.__setattr__(self, "indoor_range", tuple(self.indoor_range))
        object.__setattr__(self, "outdoor_range", tuple(self.outdoor_range))
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        if not 0.0 <= self.indoor_fraction <= 1.0:
            raise ValueError("indoor_fraction must lie in [0, 1]")


def default_groups(count: int = 200) -> list[GroupConfig]:
    return [
        GroupConfig(CameraDomain.PERSPECTIVE, count, indoor_fraction=0.5),
        GroupConfig(CameraDomain.ERP_VARIANT, count, indoor_fraction=1.0),
        GroupConfig(CameraDomain.NATIVE_ERP, count, indoor_fraction=1.0),
        GroupConfig(CameraDomain.FISHEYE, count, indoor_fraction=1.0),
    ]


def group_specs(group: GroupConfig, master_seed: int, split: str) -> list[SceneSpec]:
    specs = []
    for i in range(group.count):
        seed = derive_seed(master_seed, "dataset", split, group.domain.value, i)
        pick = substream(seed, "scene-type")
        scene = Scene.INDOOR if pick.random() < group.indoor_fraction else Scene.OUTDOOR
        rng = group.indoor_range if scene is Scene.INDOOR else group.outdoor_range
        specs.append(SceneSpec(group.domain, scene, seed, group.width, group.height, rng))
    return specs


def generate_dataset(groups: list[GroupConfig], master_seed: int, split: str = "train") -> list[Sample]:
    """All samples of all groups, in group order; a pure function of its arguments."""
    out = []
    for group in groups:
        for spec in group_specs(group, master_seed, split):
            out.append(generate_scene(spec, group.p_scene, group.p_cam))
    return out
