"""Identical-data masking.

A masked cell keeps its column but takes its value from another row of the
unlabeled pool, so the corrupted matrix has the same per-column marginals as
the clean one. The mask is drawn per cell.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class MaskedBatch:
    original: np.ndarray
    mask: np.ndarray  # 1.0 where the cell was replaced
    corrupted: np.ndarray
    p_m: float
    donor_indices: np.ndarray  # pool row used for each masked cell, -1 elsewhere


def sample_mask(batch_size: int, d: int, p_m: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= p_m <= 1.0:
        raise ValueError(f"mask probability {p_m} outside [0, 1]")
    return (rng.uniform(size=(batch_size, d)) < p_m).astype(np.float64)


def corrupt(batch, pool, mask, rng: np.random.Generator, batch_rows=None, p_m=float("nan")) -> MaskedBatch:
    """Replace masked cells with the same column from a random pool row.

    When ``batch_rows`` gives the pool index of each batch row, a cell's
    donor is drawn uniformly from the other pool rows; otherwise uniformly
    from the whole pool.
    """
    batch = np.asarray(batch, dtype=np.float64)
    pool = np.asarray(pool, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if batch.ndim != 2 or pool.ndim != 2 or batch.shape[1] != pool.shape[1]:
        raise DimensionError(f"batch {batch.shape} and pool {pool.shape} differ in width")
    if mask.shape != batch.shape:
        raise DimensionError(f"mask {mask.shape} vs batch {batch.shape}")
    n_pool = pool.shape[0]
    if n_pool < 2:
        raise ValueError("donor pool needs at least 2 rows")

    b, d = batch.shape
    if batch_rows is None:
        donors = rng.integers(0, n_pool, size=(b, d))
    else:
        own = np.asarray(batch_rows).reshape(b, 1)
        donors = rng.integers(0, n_pool - 1, size=(b, d))
        donors += donors >= own  # skip the row itself
    donors = np.where(mask > 0, donors, -1)

    cols = np.broadcast_to(np.arange(d), (b, d))
    donated = pool[np.maximum(donors, 0), cols]
    corrupted = np.where(mask > 0, donated, batch)
    return MaskedBatch(batch, mask, corrupted, p_m, donors)


def mask_and_corrupt(pool, rows, p_m, rng) -> MaskedBatch:
    """Mask the pool rows ``rows`` using the whole pool as donors."""
    batch = pool[rows]
    mask = sample_mask(batch.shape[0], batch.shape[1], p_m, rng)
    return corrupt(batch, pool, mask, rng, batch_rows=rows, p_m=p_m)
