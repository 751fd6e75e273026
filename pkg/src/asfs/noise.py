"""Seeded corruption of [0, 1]-scaled data.

Additive kinds follow the scikit-image conventions (``var`` is a variance,
salt & pepper picks each cell with probability ``amount``). Blur kinds treat
every row as an image of shape ``grid`` and need that shape declared.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .data import Dataset
from .errors import ConfigError
from .rng import make_rng

KINDS = ("gaussian", "salt_pepper", "poisson", "speckle", "gaussian_blur", "mean_blur", "missing")

_DEFAULT_VAR = {"gaussian": 0.01, "speckle": 0.3}


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    mean: float = 0.0
    var: float | None = None
    amount: float = 0.05
    salt_vs_pepper: float = 0.5
    fraction: float = 0.3
    grid: tuple | None = None
    sigma: float = 1.0
    kernel_size: int = 3
    seed: int = 0

    @property
    def variance(self) -> float:
        return _DEFAULT_VAR.get(self.kind, 0.0) if self.var is None else self.var

    @property
    def label(self) -> str:
        if self.kind in ("gaussian", "speckle"):
            return f"{self.kind}(var={self.variance:g})"
        if self.kind == "salt_pepper":
            return f"salt_pepper(amount={self.amount:g})"
        if self.kind == "missing":
            return f"missing(fraction={self.fraction:g})"
        return self.kind

    def validate(self, d: int | None = None):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        for name in ("amount", "salt_vs_pepper", "fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        if self.variance < 0:
            raise ConfigError("variance must be non-negative")
        if self.kind in ("gaussian_blur", "mean_blur"):
            if self.grid is None:
                raise ConfigError(f"{self.kind} needs a grid shape (rows, cols)")
            if len(self.grid) != 2 or min(self.grid) < 1:
                raise ConfigError(f"bad grid shape {self.grid}")
            if d is not None and self.grid[0] * self.grid[1] != d:
                raise ConfigError(f"grid {tuple(self.grid)} does not cover {d} features")
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ConfigError("kernel_size must be a positive odd integer")
            if self.kind == "gaussian_blur" and self.sigma <= 0:
                raise ConfigError("sigma must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["grid"] is not None:
            out["grid"] = list(out["grid"])
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        d = dict(d)
        if d.get("grid") is not None:
            d["grid"] = tuple(d["grid"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown noise fields {sorted(unknown)}")
        return cls(**d)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def blur(x, grid, kernel) -> np.ndarray:
    """Convolve every row, reshaped to ``grid``, with ``kernel`` (reflective edges)."""
    n = x.shape[0]
    imgs = x.reshape(n, *grid)
    out = ndimage.convolve(imgs, kernel[None, :, :], mode="reflect")
    return out.reshape(n, -1)


def missing_mask(x, fraction: float, seed: int):
    """Zero a uniformly random ``round(fraction * size)`` cells.

    Returns ``(corrupted, missing)`` where ``missing`` is boolean.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside [0, 1]")
    if isinstance(x, Dataset):
        out, missing = missing_mask(x.features, fraction, seed)
        return x.with_features(out), missing
    x = np.asarray(x, dtype=np.float64)
    rng = make_rng(seed, "noise", "missing")
    n_missing = int(round(fraction * x.size))
    missing = np.zeros(x.size, dtype=bool)
    missing[rng.permutation(x.size)[:n_missing]] = True
    missing = missing.reshape(x.shape)
    out = x.copy()
    out[missing] = 0.0
    return out, missing


def apply_noise(x, spec: NoiseSpec, clip: bool = True):
    """Return a corrupted copy of a matrix or Dataset. ``clip=False`` keeps
    values outside [0, 1] (useful for inspecting additive noise)."""
    if isinstance(x, Dataset):
        return x.with_features(apply_noise(x.features, spec, clip))
    x = np.asarray(x, dtype=np.float64)
    spec.validate(x.shape[1] if x.ndim == 2 else None)
    rng = make_rng(spec.seed, "noise", spec.kind)
    kind = spec.kind

    if kind == "gaussian":
        out = x + rng.normal(spec.mean, np.sqrt(spec.variance), size=x.shape)
    elif kind == "speckle":
        out = x + x * rng.normal(spec.mean, np.sqrt(spec.variance), size=x.shape)
    elif kind == "salt_pepper":
        out = x.copy()
        hit = rng.uniform(size=x.shape) < spec.amount
        salt = rng.uniform(size=x.shape) < spec.salt_vs_pepper
        out[hit & salt] = 1.0
        out[hit & ~salt] = 0.0
    elif kind == "poisson":
        levels = 2.0 ** np.ceil(np.log2(max(len(np.unique(x)), 2)))
        out = rng.poisson(np.clip(x, 0.0, None) * levels) / levels
    elif kind in ("gaussian_blur", "mean_blur"):
        k = spec.kernel_size
        kernel = gaussian_kernel(k, spec.sigma) if kind == "gaussian_blur" else np.full((k, k), 1.0 / (k * k))
        out = blur(x, tuple(spec.grid), kernel)
    else:  # missing
        out, _ = missing_mask(x, spec.fraction, spec.seed)
    return np.clip(out, 0.0, 1.0) if clip else out


def apply_all(x, specs):
    for spec in specs:
        x = apply_noise(x, spec)
    return x
