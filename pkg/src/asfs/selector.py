"""Batch-attention feature weighting and the supervised evaluator.

Per sample the attention network maps a representation ``r`` of the row to
scores ``tau = W2 tanh(W1 r + b1) + b2``. Scores are averaged over the batch
and softmax-normalised into one weight vector ``a``; the evaluator network
is trained on ``x * a``. Gradients reach the attention network through
``a`` and, unless frozen, the encoder and reconstruction head that produce
``r``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .data import LABELED, DataError, Dataset, batch_indices
from .errors import DimensionError, NumericalError
from .nn import (Adam, Sequential, loss_categorical_ce, loss_mse, prefixed,
                 softmax)
from .pretext import AutoencoderModel
from .rng import make_rng

log = logging.getLogger(__name__)

MODES = ("full", "no-selfsup", "no-location")


@dataclass
class SelectorConfig:
    epochs: int = 2000
    learning_rate: float = 0.001
    batch_size: int = 128
    hidden: int = 300
    eval_widths: tuple = (64, 32)
    freeze_autoencoder: bool = False
    final_weights: str = "full-pass"  # or "ema"
    ema_decay: float = 0.99
    evaluator_input: str = "raw"  # or "reconstruction"


class AttentionSelector:
    def __init__(self, d, n_outputs, *, hidden=300, eval_widths=(64, 32), mode="full",
                 autoencoder: AutoencoderModel | None = None, task="classification",
                 freeze_autoencoder=False, evaluator_input="raw", seed=0, rng=None):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if hidden < 1:
            raise ValueError("attention width must be positive")
        if task not in ("classification", "regression"):
            raise ValueError(f"unknown task {task!r}")
        if evaluator_input not in ("raw", "reconstruction"):
            raise ValueError(f"unknown evaluator input {evaluator_input!r}")
        if mode == "no-selfsup":
            autoencoder = None
        elif autoencoder is None:
            raise ValueError(f"mode {mode!r} needs a pretrained autoencoder")
        elif autoencoder.d != d:
            raise DimensionError(f"autoencoder has d={autoencoder.d}, data has d={d}")
        if mode == "no-location" and autoencoder.use_location:
            raise ValueError("no-location mode needs an autoencoder pretrained without the mask task")
        self.d = d
        self.n_outputs = n_outputs
        self.hidden = int(hidden)
        self.eval_widths = tuple(int(w) for w in eval_widths)
        self._mode = mode
        self.task = task
        self.autoencoder = autoencoder
        self.freeze_autoencoder = bool(freeze_autoencoder)
        self.evaluator_input = evaluator_input
        self.seed = int(seed)
        self.history: list[dict] = []
        if rng is None:
            rng = make_rng(seed, "init", "selector")
        self.attention = Sequential.build([d, self.hidden, d], ["tanh", "identity"], rng)
        widths = [d, *self.eval_widths, n_outputs]
        acts = ["relu"] * len(self.eval_widths) + ["identity"]
        self.evaluator = Sequential.build(widths, acts, rng)

    @property
    def mode(self):
        return self._mode

    @property
    def uses_autoencoder(self):
        return self.autoencoder is not None

    @property
    def weights_reconstruction(self):
        """True when the evaluator sees the reconstructed rather than raw row."""
        return self.uses_autoencoder and self.evaluator_input == "reconstruction"

    def trainable_params(self) -> dict:
        params = {
            **prefixed("attention", self.attention.params()),
            **prefixed("evaluator", self.evaluator.params()),
        }
        if self.uses_autoencoder and not self.freeze_autoencoder:
            ae = self.autoencoder
            params.update(prefixed("autoencoder.encoder", ae.encoder.params()))
            params.update(prefixed("autoencoder.recon_head", ae.recon_head.params()))
        return params

    def _check(self, x):
        if x.ndim != 2 or x.shape[1] != self.d:
            raise DimensionError(f"expected (batch, {self.d}) input, got {x.shape}")

    # ---- serialization

    def header(self) -> dict:
        return {
            "kind": "selector",
            "seed": self.seed,
            "d": self.d,
            "n_outputs": self.n_outputs,
            "hidden": self.hidden,
            "eval_widths": list(self.eval_widths),
            "mode": self.mode,
            "task": self.task,
            "freeze_autoencoder": self.freeze_autoencoder,
            "evaluator_input": self.evaluator_input,
            "layers": [
                {"name": f"{net}.{i}", "in": a, "out": b, "activation": act}
                for net in ("attention", "evaluator")
                for i, (a, b, act) in enumerate(getattr(self, net).specs())
            ],
            "autoencoder": None if self.autoencoder is None else self.autoencoder.header(),
            "history": self.history,
        }

    def save(self, path, **extra):
        arrays = {**prefixed("attention", self.attention.params()),
                  **prefixed("evaluator", self.evaluator.params())}
        if self.autoencoder is not None:
            arrays.update(prefixed("autoencoder", self.autoencoder.params()))
        checkpoint.save(path, {**self.header(), **extra}, arrays)

    @classmethod
    def load(cls, path):
        header, arrays = checkpoint.load(path)
        if header.get("kind") != "selector":
            raise checkpoint.CheckpointError(f"{path} is not a selector checkpoint")
        ae = None
        if header["autoencoder"] is not None:
            ae = AutoencoderModel.from_arrays(header["autoencoder"], arrays, prefix="autoencoder.")
        sel = cls(header["d"], header["n_outputs"], hidden=header["hidden"],
                  eval_widths=header["eval_widths"], mode=header["mode"], autoencoder=ae,
                  task=header["task"], freeze_autoencoder=header["freeze_autoencoder"],
                  evaluator_input=header.get("evaluator_input", "raw"), seed=header["seed"])
        sel.history = list(header.get("history", []))
        for prefix, net in (("attention.", sel.attention), ("evaluator.", sel.evaluator)):
            for name, arr in net.params().items():
                src = arrays.get(prefix + name)
                if src is None or src.shape != arr.shape:
                    raise checkpoint.CheckpointError(f"missing or misshapen parameter {prefix + name}")
                arr[...] = src
        return sel, header


def _representation(sel: AttentionSelector, x):
    """Forward through the representation network; returns (r, caches)."""
    if not sel.uses_autoencoder:
        return x, None
    ae = sel.autoencoder
    z_acts = ae.encoder.forward(x)
    r_acts = ae.recon_head.forward(z_acts[-1])
    return r_acts[-1], (z_acts, r_acts)


def attention_scores(sel: AttentionSelector, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    sel._check(batch)
    r, _ = _representation(sel, batch)
    return sel.attention(r)


def batch_weights(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError("batch_weights needs a non-empty (batch, d) score matrix")
    return softmax(scores.mean(axis=0))


def _supervised_loss(sel, outputs, labels):
    if sel.task == "classification":
        return loss_categorical_ce(outputs, labels)
    return loss_mse(outputs, np.asarray(labels, dtype=np.float64).reshape(outputs.shape))


def selection_step(sel: AttentionSelector, batch, labels):
    """Loss and gradients of the evaluator objective for one labeled batch.

    Returns ``(loss, grads, a)``; ``grads`` is keyed like
    :meth:`AttentionSelector.trainable_params`.
    """
    x = np.asarray(batch, dtype=np.float64)
    sel._check(x)
    labels = np.asarray(labels)
    if x.shape[0] == 0:
        raise DataError("empty labeled batch")
    if labels.shape[0] != x.shape[0]:
        raise DimensionError(f"{labels.shape[0]} labels for {x.shape[0]} rows")

    r, caches = _representation(sel, x)
    att_acts = sel.attention.forward(r)
    tau = att_acts[-1]
    a = softmax(tau.mean(axis=0))
    feats = r if sel.weights_reconstruction else x
    g = feats * a
    ev_acts = sel.evaluator.forward(g)
    loss, d_out = _supervised_loss(sel, ev_acts[-1], labels)

    grads = {}
    ev_grads, d_g = sel.evaluator.backward(ev_acts, d_out)
    grads.update(prefixed("evaluator", ev_grads))
    d_a = np.sum(d_g * feats, axis=0)
    d_tau_bar = a * (d_a - np.dot(a, d_a))
    d_tau = np.broadcast_to(d_tau_bar / x.shape[0], tau.shape)
    att_grads, d_r = sel.attention.backward(att_acts, d_tau)
    grads.update(prefixed("attention", att_grads))
    if sel.weights_reconstruction:
        d_r = d_r + d_g * a
    if caches is not None and not sel.freeze_autoencoder:
        z_acts, r_acts = caches
        ae = sel.autoencoder
        rec_grads, d_z = ae.recon_head.backward(r_acts, d_r)
        enc_grads, _ = ae.encoder.backward(z_acts, d_z)
        grads.update(prefixed("autoencoder.recon_head", rec_grads))
        grads.update(prefixed("autoencoder.encoder", enc_grads))
    return loss, grads, a


@dataclass(frozen=True)
class FeatureRanking:
    weights: np.ndarray
    order: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_weights(cls, weights, metadata=None):
        w = np.asarray(weights, dtype=np.float64)
        order = np.lexsort((np.arange(w.size), -w))
        return cls(w, order, dict(metadata or {}))

    @property
    def d(self):
        return self.weights.size

    def top_k(self, k: int) -> list[int]:
        return select_top_k(self, k)


def select_top_k(ranking: FeatureRanking, k: int) -> list[int]:
    if not 1 <= k <= ranking.d:
        raise ValueError(f"k={k} outside [1, {ranking.d}]")
    return [int(i) for i in ranking.order[:k]]


def train_selector(sel: AttentionSelector, ds: Dataset, config: SelectorConfig | None = None,
                   seed: int | None = None, on_step=None, metadata=None):
    """Train ``sel`` with Adam on the labeled rows of ``ds``.

    ``on_step(epoch, step, a, loss)`` sees the weight vector of every
    training step. Returns ``(sel, FeatureRanking)``.
    """
    config = config or SelectorConfig()
    seed = sel.seed if seed is None else seed
    X = ds.X(LABELED)
    if X.shape[0] == 0:
        raise DataError("selector training needs labeled rows")
    y = ds.y(LABELED)
    sel._check(X)

    opt = Adam(config.learning_rate)
    params = sel.trainable_params()
    ema = None
    for epoch in range(config.epochs):
        total = 0.0
        steps = batch_indices(X.shape[0], config.batch_size, seed, epoch, stream="select")
        for step, rows in enumerate(steps):
            loss, grads, a = selection_step(sel, X[rows], y[rows])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite selection loss at epoch {epoch}, batch {step}")
            opt.step(params, grads)
            total += loss
            if config.final_weights == "ema":
                ema = a.copy() if ema is None else config.ema_decay * ema + (1 - config.ema_decay) * a
            if on_step is not None:
                on_step(epoch, step, a, loss)
        sel.history.append({"epoch": epoch + 1, "loss": total / len(steps)})

    if config.final_weights == "ema" and ema is not None:
        weights = ema / ema.sum()
    else:
        weights = batch_weights(attention_scores(sel, X))
    meta = {"seed": seed, "mode": sel.mode, **(metadata or {})}
    return sel, FeatureRanking.from_weights(weights, meta)


# ---------------------------------------------------------- ranking file


RANKING_MAGIC = "# asfs-ranking v1"


def write_ranking(path, ranking: FeatureRanking, feature_names, k=None):
    lines = [RANKING_MAGIC]
    meta = dict(ranking.metadata)
    if k is not None:
        meta["k"] = k
    for key in sorted(meta):
        lines.append(f"# {key}: {meta[key]}")
    lines.append("rank,feature_index,feature_name,weight")
    for rank, j in enumerate(ranking.order, start=1):
        lines.append(f"{rank},{j},{feature_names[j]},{ranking.weights[j]:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_ranking(path):
    """Parse a ranking file; returns ``(FeatureRanking, feature_names)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != RANKING_MAGIC:
        raise ValueError(f"{path}: not a ranking file")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("# "):
        key, _, value = lines[i][2:].partition(": ")
        meta[key] = value
        i += 1
    if i >= len(lines) or lines[i] != "rank,feature_index,feature_name,weight":
        raise ValueError(f"{path}: missing column header")
    body = [ln.split(",") for ln in lines[i + 1:] if ln]
    try:
        idx = np.array([int(r[1]) for r in body])
        names_by_idx = {int(r[1]): r[2] for r in body}
        weights_by_idx = {int(r[1]): float(r[3]) for r in body}
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from None
    d = len(body)
    if sorted(idx.tolist()) != list(range(d)):
        raise ValueError(f"{path}: feature indices are not a permutation of 0..{d - 1}")
    weights = np.array([weights_by_idx[j] for j in range(d)])
    ranking = FeatureRanking(weights, idx, meta)
    return ranking, [names_by_idx[j] for j in range(d)]
