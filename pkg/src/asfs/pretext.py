"""Multi-task denoising autoencoder trained on identical-data masking.

A shared encoder feeds two heads: one predicts which cells were replaced
(binary cross-entropy against the mask), the other reconstructs the clean
row (squared error over all features). The training objective is
``l_m + alpha * l_r``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .data import UNLABELED, DataError, Dataset, batch_indices
from .errors import DimensionError, NumericalError
from .masking import MaskedBatch, mask_and_corrupt
from .nn import RMSprop, Sequential, loss_bce, loss_mse, prefixed
from .rng import make_rng

log = logging.getLogger(__name__)


@dataclass
class PretextConfig:
    epochs: int = 40
    learning_rate: float = 0.001
    batch_size: int = 128
    p_m: float = 0.2
    alpha: float = 2.0
    hidden: int | None = None
    z_dim: int | None = None


def default_widths(d: int):
    hidden = max(16, round(d / 2))
    z_dim = max(8, round(d / 4))
    # the code must compress, so cap it below the input width
    z_dim = max(1, min(z_dim, d - 1))
    return hidden, z_dim


class AutoencoderModel:
    """Encoder ``d -> hidden -> z_dim`` and two heads ``z_dim -> hidden -> d``.

    ``use_location=False`` drops the mask head from the objective, which is
    the reconstruction-only ablation.
    """

    def __init__(self, d, hidden=None, z_dim=None, *, alpha=2.0, p_m=0.2,
                 use_location=True, seed=0, rng=None):
        dh, dz = default_widths(d)
        hidden = dh if hidden is None else int(hidden)
        z_dim = dz if z_dim is None else int(z_dim)
        if not 0 < z_dim < d:
            raise ValueError(f"z_dim must satisfy 0 < z_dim < d (got {z_dim}, d={d})")
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.d, self.hidden, self.z_dim = d, hidden, z_dim
        self.alpha = float(alpha)
        self.p_m = float(p_m)
        self.use_location = bool(use_location)
        self.seed = int(seed)
        self.history: list[dict] = []
        if rng is None:
            rng = make_rng(seed, "init", "autoencoder")
        sig = ["sigmoid", "sigmoid"]
        self.encoder = Sequential.build([d, hidden, z_dim], sig, rng)
        self.mask_head = Sequential.build([z_dim, hidden, d], sig, rng)
        self.recon_head = Sequential.build([z_dim, hidden, d], sig, rng)

    @property
    def mask_weight(self) -> float:
        return 1.0 if self.use_location else 0.0

    def params(self) -> dict:
        return {
            **prefixed("encoder", self.encoder.params()),
            **prefixed("mask_head", self.mask_head.params()),
            **prefixed("recon_head", self.recon_head.params()),
        }

    def _check(self, x):
        if x.ndim != 2 or x.shape[1] != self.d:
            raise DimensionError(f"expected (batch, {self.d}) input, got {x.shape}")

    def encode(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        return self.encoder(x)

    def reconstruct(self, x):
        return self.recon_head(self.encode(x))

    def predict_mask(self, x):
        return self.mask_head(self.encode(x))

    def copy(self) -> "AutoencoderModel":
        return AutoencoderModel.from_arrays(self.header(), self.params())

    # ---- serialization

    def header(self) -> dict:
        layers = []
        for name in ("encoder", "mask_head", "recon_head"):
            for i, (n_in, n_out, act) in enumerate(getattr(self, name).specs()):
                layers.append({"name": f"{name}.{i}", "in": n_in, "out": n_out, "activation": act})
        return {
            "kind": "autoencoder",
            "seed": self.seed,
            "d": self.d,
            "hidden": self.hidden,
            "z_dim": self.z_dim,
            "alpha": self.alpha,
            "p_m": self.p_m,
            "use_location": self.use_location,
            "layers": layers,
            "history": self.history,
        }

    def save(self, path, **extra):
        checkpoint.save(path, {**self.header(), **extra}, self.params())

    @classmethod
    def from_arrays(cls, header: dict, arrays: dict, prefix: str = ""):
        model = cls(header["d"], header["hidden"], header["z_dim"], alpha=header["alpha"],
                    p_m=header["p_m"], use_location=header["use_location"], seed=header["seed"])
        model.history = list(header.get("history", []))
        params = model.params()
        for name, arr in params.items():
            src = arrays.get(prefix + name)
            if src is None or src.shape != arr.shape:
                raise checkpoint.CheckpointError(f"missing or misshapen parameter {prefix + name}")
            arr[...] = src
        return model

    @classmethod
    def load(cls, path):
        header, arrays = checkpoint.load(path)
        if header.get("kind") != "autoencoder":
            raise checkpoint.CheckpointError(f"{path} is not an autoencoder checkpoint")
        return cls.from_arrays(header, arrays), header


def encode(model: AutoencoderModel, x):
    return model.encode(x)


def reconstruct(model: AutoencoderModel, x_noisy):
    return model.reconstruct(x_noisy)


def pretext_loss(model: AutoencoderModel, masked: MaskedBatch):
    """Return ``(total, l_m, l_r, grads)`` for one masked batch.

    ``l_m`` is always reported; it only enters ``total`` and the gradients
    when the model uses the location task.
    """
    x_tilde = masked.corrupted
    model._check(x_tilde)
    z_acts = model.encoder.forward(x_tilde)
    z = z_acts[-1]
    m_acts = model.mask_head.forward(z)
    r_acts = model.recon_head.forward(z)
    l_m, g_m = loss_bce(m_acts[-1], masked.mask)
    l_r, g_r = loss_mse(r_acts[-1], masked.original)
    w_m = model.mask_weight
    total = w_m * l_m + model.alpha * l_r

    grads = {}
    r_grads, dz = model.recon_head.backward(r_acts, model.alpha * g_r)
    grads.update(prefixed("recon_head", r_grads))
    if w_m:
        m_grads, dz_m = model.mask_head.backward(m_acts, g_m)
        grads.update(prefixed("mask_head", m_grads))
        dz = dz + dz_m
    e_grads, _ = model.encoder.backward(z_acts, dz)
    grads.update(prefixed("encoder", e_grads))
    return total, l_m, l_r, grads


def pretrain(model: AutoencoderModel, data, config: PretextConfig | None = None,
             seed: int | None = None, on_epoch=None) -> AutoencoderModel:
    """Train ``model`` in place with RMSprop on the unlabeled rows.

    ``data`` is a Dataset (its ``unlabeled`` partition is used) or a plain
    matrix. ``on_epoch(epoch, record)`` is called after every epoch.
    """
    config = config or PretextConfig()
    seed = model.seed if seed is None else seed
    pool = data.X(UNLABELED) if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if pool.shape[0] == 0:
        raise DataError("pretraining needs a non-empty unlabeled partition")
    model._check(pool)
    if config.epochs > 0 and pool.shape[0] < 2:
        raise DataError("identical-data masking needs at least 2 unlabeled rows")

    opt = RMSprop(config.learning_rate)
    params = model.params()
    for epoch in range(config.epochs):
        sums = np.zeros(3)
        steps = batch_indices(pool.shape[0], config.batch_size, seed, epoch, stream="pretext")
        for step, rows in enumerate(steps):
            rng = make_rng(seed, "mask", epoch, step)
            masked = mask_and_corrupt(pool, rows, model.p_m, rng)
            total, l_m, l_r, grads = pretext_loss(model, masked)
            if not np.isfinite(total):
                raise NumericalError(f"non-finite pretext loss at epoch {epoch}, batch {step}")
            opt.step(params, grads)
            sums += (total, l_m, l_r)
        mean = sums / len(steps)
        record = {"epoch": epoch + 1, "total": float(mean[0]),
                  "l_m": float(mean[1]), "l_r": float(mean[2])}
        model.history.append(record)
        log.debug("pretext epoch %(epoch)d total=%(total).5f l_m=%(l_m).5f l_r=%(l_r).5f", record)
        if on_epoch is not None:
            on_epoch(epoch + 1, record)
    return model
