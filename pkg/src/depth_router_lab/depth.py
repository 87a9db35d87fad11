"""Depth rasters, accuracy metrics and PFM raster I/O."""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass

import numpy as np

DELTA_BASE = 1.25


class DimensionMismatchError(ValueError):
    pass


class UnevaluableSampleError(ValueError):
    """Raised when two depth maps share no jointly valid pixel."""


class RasterFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth raster (meters) with a per-pixel validity mask.

    ``values`` has shape ``(height, width)``, row 0 at the top. Pixels whose
    value is non-finite or non-positive are always marked invalid.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ValueError(f"depth raster must be a non-empty 2-D array, got shape {values.shape}")
        valid = np.broadcast_to(np.asarray(self.valid, dtype=bool), values.shape)
        with np.errstate(invalid="ignore"):
            valid = valid & np.isfinite(values) & (values > 0)
        values.setflags(write=False)
        valid = np.array(valid)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, values, valid=None) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        if valid is None:
            valid = np.ones(values.shape, dtype=bool)
        return cls(values, valid)

    @classmethod
    def constant(cls, value: float, height: int, width: int) -> "DepthMap":
        return cls.from_array(np.full((height, width), float(value)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def masked(self) -> np.ndarray:
        """Values with invalid pixels replaced by NaN."""
        return np.where(self.valid, self.values, np.nan)

    def equals(self, other: "DepthMap") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.values[self.valid], other.values[other.valid])
        )


@dataclass(frozen=True)
class MetricSet:
    delta1: float
    delta2: float
    delta3: float
    abs_rel: float
    rmse: float
    n_valid: int

    def as_dict(self) -> dict:
        return {
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
            "abs_rel": self.abs_rel,
            "rmse": self.rmse,
            "n_valid": self.n_valid,
        }


def _check_dims(a: DepthMap, b: DepthMap):
    if a.shape != b.shape:
        raise DimensionMismatchError(f"depth maps differ in size: {a.shape} vs {b.shape}")


def joint_valid_mask(a: DepthMap, b: DepthMap) -> np.ndarray:
    _check_dims(a, b)
    # DepthMap already folds non-finite / non-positive values into `valid`.
    return a.valid & b.valid


def delta1(pred: DepthMap, gt: DepthMap) -> float:
    """Fast path for the delta1 score alone."""
    mask = joint_valid_mask(pred, gt)
    n = int(mask.sum())
    if n == 0:
        raise UnevaluableSampleError("no jointly valid pixels")
    p = pred.values[mask]
    g = gt.values[mask]
    ratio = np.maximum(p / g, g / p)
    return int(np.count_nonzero(ratio < DELTA_BASE)) / n


def compute_metrics(pred: DepthMap, gt: DepthMap) -> MetricSet:
    """Standard depth accuracy metrics over the joint valid mask.

    ``delta_i`` uses the strict test ``max(pred/gt, gt/pred) < 1.25**i``;
    ``abs_rel`` normalises by ground truth only.
    """
    mask = joint_valid_mask(pred, gt)
    n = int(mask.sum())
    if n == 0:
        raise UnevaluableSampleError("no jointly valid pixels")
    p = pred.values[mask]
    g = gt.values[mask]
    ratio = np.maximum(p / g, g / p)
    deltas = [int(np.count_nonzero(ratio < DELTA_BASE**i)) / n for i in (1, 2, 3)]
    diff = p - g
    abs_rel = float(np.mean(np.abs(diff) / g))
    rmse = math.sqrt(float(np.mean(diff * diff)))
    return MetricSet(deltas[0], deltas[1], deltas[2], abs_rel, rmse, n)


def mean_metrics(metrics: list[MetricSet]) -> MetricSet:
    """Uniform average of per-sample metrics; ``n_valid`` is summed."""
    if not metrics:
        raise ValueError("cannot average an empty metric list")
    arr = np.array([[m.delta1, m.delta2, m.delta3, m.abs_rel, m.rmse] for m in metrics])
    means = arr.mean(axis=0)
    return MetricSet(*(float(v) for v in means), n_valid=sum(m.n_valid for m in metrics))


# --- PFM rasters -------------------------------------------------------------

_HEADER_RE = re.compile(rb"^(Pf|PF)\s+(\S+)\s+(\S+)\s+(\S+)\s")


def write_raster(depth: DepthMap, path) -> None:
    """Write a single-channel little-endian PFM; invalid pixels become NaN.

    Values are stored as float32, so only float32-representable depths survive
    a round trip bit-exactly.
    """
    data = depth.masked().astype("<f4")
    header = f"Pf\n{depth.width} {depth.height}\n-1.0\n".encode("ascii")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header)
        # PFM stores scanlines bottom-to-top.
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())
    os.replace(tmp, path)


def read_raster(path) -> DepthMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    m = _HEADER_RE.match(blob[:256])
    if m is None:
        raise RasterFormatError(f"{path}: malformed PFM header")
    if m.group(1) != b"Pf":
        raise RasterFormatError(f"{path}: only single-channel 'Pf' rasters are supported")
    try:
        width, height, scale = int(m.group(2)), int(m.group(3)), float(m.group(4))
    except ValueError as exc:
        raise RasterFormatError(f"{path}: malformed PFM header") from exc
    if width <= 0 or height <= 0:
        raise RasterFormatError(f"{path}: zero or negative raster dimensions {width}x{height}")
    if scale == 0 or not math.isfinite(scale):
        raise RasterFormatError(f"{path}: invalid scale field {scale}")
    offset = m.end()
    need = width * height * 4
    payload = blob[offset:offset + need]
    if len(payload) < need:
        raise RasterFormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width)[::-1]
    values = data.astype(np.float64)
    return DepthMap.from_array(values)
