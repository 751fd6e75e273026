"""Experiment driver: downstream scoring of feature subsets, cross-validation,
noise and label-budget sweeps, and a Fisher-score baseline."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import LABELED, TEST, UNUSED, DataError, Dataset, batch_indices, subsample_labeled
from .errors import ConfigError
from .nn import Adam, Sequential, loss_categorical_ce
from .noise import apply_all
from .pretext import AutoencoderModel, PretextConfig, pretrain
from .rng import make_rng
from .selector import AttentionSelector, FeatureRanking, SelectorConfig, train_selector

log = logging.getLogger(__name__)


@dataclass
class DownstreamConfig:
    """Dense classifier that stands in for gradient boosting when scoring subsets."""

    epochs: int = 200
    learning_rate: float = 0.01
    batch_size: int = 32
    hidden: tuple = (64, 32)


# ------------------------------------------------------------- metrics


def macro_f1(y_true, y_pred) -> float:
    """Unweighted mean of per-class F1 over classes seen in either vector."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    scores = []
    for c in np.union1d(y_true, y_pred):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores)) if scores else 0.0


def precision_at_k(subset, informative) -> float:
    subset = list(subset)
    return len(set(subset) & set(informative)) / len(subset)


# ---------------------------------------------------------- downstream


def train_classifier(X, y, n_classes, config: DownstreamConfig, seed: int) -> Sequential:
    widths = [X.shape[1], *config.hidden, n_classes]
    acts = ["relu"] * len(config.hidden) + ["identity"]
    net = Sequential.build(widths, acts, make_rng(seed, "init", "downstream"))
    opt = Adam(config.learning_rate)
    params = net.params()
    for epoch in range(config.epochs):
        for rows in batch_indices(X.shape[0], config.batch_size, seed, epoch, stream="downstream"):
            acts_ = net.forward(X[rows])
            _, grad = loss_categorical_ce(acts_[-1], y[rows])
            grads, _ = net.backward(acts_, grad)
            opt.step(params, grads)
    return net


def downstream_eval(ds: Dataset, feature_subset, config: DownstreamConfig | None = None,
                    seed: int = 0, train_tag=LABELED, test_tag=TEST):
    """Train the dense classifier on ``train_tag`` rows restricted to the
    subset and return ``(accuracy, macro_f1)`` on ``test_tag`` rows.

    The subset is used in ascending index order, so any permutation of the
    same features scores identically.
    """
    config = config or DownstreamConfig()
    subset = sorted({int(j) for j in feature_subset})
    if not subset:
        raise ValueError("feature subset is empty")
    if subset[0] < 0 or subset[-1] >= ds.n_features:
        raise ValueError(f"feature index out of range for d={ds.n_features}")
    if ds.labels is None:
        raise DataError("downstream evaluation needs labels")
    train, test = ds.rows(train_tag), ds.rows(test_tag)
    if train.size == 0:
        raise DataError(f"no {train_tag} rows to train the downstream classifier")
    if test.size == 0:
        raise DataError(f"no {test_tag} rows with labels to score")
    X = ds.features[:, subset]
    net = train_classifier(X[train], ds.labels[train], ds.n_classes, config, seed)
    pred = np.argmax(net(X[test]), axis=1)
    truth = ds.labels[test]
    return float(np.mean(pred == truth)), macro_f1(truth, pred)


# --------------------------------------------------------------- fisher


def fisher_score(ds, labels=None) -> np.ndarray:
    """Per-feature Fisher score on the labeled rows.

    Accepts a Dataset (labeled partition, or all rows when nothing is tagged
    labeled) or a matrix plus ``labels``. Features with zero within-class
    variance but separated class means score ``inf``; constant features
    score 0.
    """
    if isinstance(ds, Dataset):
        rows = ds.rows(LABELED)
        if rows.size == 0:
            rows = np.arange(ds.n_samples)
        if ds.labels is None:
            raise DataError("Fisher score needs labels")
        X, y = ds.features[rows], ds.labels[rows]
    else:
        X, y = np.asarray(ds, dtype=np.float64), np.asarray(labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("Fisher score needs at least two classes")
    mu = X.mean(axis=0)
    between = np.zeros(X.shape[1])
    within = np.zeros(X.shape[1])
    for c in classes:
        xc = X[y == c]
        between += xc.shape[0] * (xc.mean(axis=0) - mu) ** 2
        within += xc.shape[0] * xc.var(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = between / within
    score[(within == 0) & (between > 0)] = np.inf
    score[(within == 0) & (between == 0)] = 0.0
    return score


def fisher_ranking(ds) -> FeatureRanking:
    """Rank features by Fisher score; ``inf`` first, ties by ascending index."""
    s = fisher_score(ds)
    order = np.lexsort((np.arange(s.size), -s))
    return FeatureRanking(s, order, {"method": "fisher"})


# ------------------------------------------------------------- pipeline


@dataclass
class PipelineConfig:
    pretext: PretextConfig = field(default_factory=PretextConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    downstream: DownstreamConfig = field(default_factory=DownstreamConfig)
    task: str = "classification"


def build_autoencoder(d, cfg: PretextConfig, seed: int, use_location=True) -> AutoencoderModel:
    return AutoencoderModel(d, cfg.hidden, cfg.z_dim, alpha=cfg.alpha, p_m=cfg.p_m,
                            use_location=use_location, seed=seed)


def pretrain_for_mode(ds: Dataset, cfg: PipelineConfig, seed: int, mode: str):
    if mode == "no-selfsup":
        return None
    ae = build_autoencoder(ds.n_features, cfg.pretext, seed, use_location=(mode == "full"))
    return pretrain(ae, ds, cfg.pretext, seed=seed)


def n_outputs(ds: Dataset, task: str) -> int:
    return ds.n_classes if task == "classification" else 1


def select_features(ds: Dataset, cfg: PipelineConfig, seed: int, mode: str,
                    autoencoder: AutoencoderModel | None = None, metadata=None):
    """Pretrain (unless given an autoencoder) and train the selector.

    Returns ``(ranking, selector)``. A given autoencoder is copied, since
    selection fine-tunes it.
    """
    if autoencoder is None:
        autoencoder = pretrain_for_mode(ds, cfg, seed, mode)
    elif mode != "no-selfsup":
        autoencoder = autoencoder.copy()
    sel = AttentionSelector(
        ds.n_features, n_outputs(ds, cfg.task), hidden=cfg.selector.hidden,
        eval_widths=cfg.selector.eval_widths, mode=mode, autoencoder=autoencoder,
        task=cfg.task, freeze_autoencoder=cfg.selector.freeze_autoencoder,
        evaluator_input=cfg.selector.evaluator_input, seed=seed,
    )
    sel, ranking = train_selector(sel, ds, cfg.selector, seed=seed, metadata=metadata)
    return ranking, sel


def _score(ds, ranking, k, cfg, seed, train_tag=LABELED, test_tag=TEST):
    subset = ranking.top_k(k)
    acc, f1 = downstream_eval(ds, subset, cfg.downstream, seed, train_tag, test_tag)
    m = {"accuracy": acc, "macro_f1": f1}
    if ds.informative is not None:
        m["precision_at_k"] = precision_at_k(subset, ds.informative)
    return m


# -------------------------------------------------------------- results


@dataclass
class ExperimentResult:
    """One table row: a setting and its metrics across seeds/folds.

    ``wall_clock`` is kept out of :meth:`to_record` so that record streams
    are reproducible byte for byte.
    """

    run_id: str
    config_digest: str
    params: dict
    per_seed: list
    wall_clock: float = 0.0

    @property
    def seeds(self):
        return [r["seed"] for r in self.per_seed]

    @property
    def aggregate(self) -> dict:
        out = {}
        for key in ("accuracy", "macro_f1", "precision_at_k"):
            vals = [r[key] for r in self.per_seed if key in r]
            if vals:
                out[key] = {"median": float(np.median(vals)), "std": float(np.std(vals))}
        return out

    def to_record(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_digest": self.config_digest,
            "params": self.params,
            "seeds": self.seeds,
            "per_seed": self.per_seed,
            "aggregate": self.aggregate,
        }


def _emit(results, sink, result):
    results.append(result)
    if sink is not None:
        sink(result)


def _resolve(dataset, seed) -> Dataset:
    return dataset(seed) if callable(dataset) else dataset


def noisy_copy(ds, specs, seed):
    if not specs:
        return ds
    return apply_all(ds, [replace(s, seed=s.seed + seed) for s in specs])


# --------------------------------------------------------- experiments


def cross_validate(ds: Dataset, cfg: PipelineConfig, folds=5, repeats=5, k=5, mode="full",
                   seed=0, digest="", share_pretraining=False) -> ExperimentResult:
    """Repeated stratified k-fold over the labeled rows.

    Each fold trains the selector and the downstream classifier on the other
    folds and scores the held-out fold. Pretraining is re-run per fold unless
    ``share_pretraining``.
    """
    if folds < 2:
        raise ConfigError("cross-validation needs at least 2 folds")
    labeled = ds.rows(LABELED)
    if labeled.size < folds:
        raise DataError(f"{labeled.size} labeled rows cannot fill {folds} folds")
    t0 = time.perf_counter()
    shared = pretrain_for_mode(ds, cfg, seed, mode) if share_pretraining else None
    runs = []
    for rep in range(repeats):
        for f, held in enumerate(stratified_folds(ds.labels[labeled], folds, seed, rep)):
            tags = ds.partition.copy()
            tags[tags == TEST] = UNUSED
            tags[labeled[held]] = TEST
            fold_ds = replace(ds, partition=tags)
            run_seed = seed * 1000 + rep * folds + f
            ranking, _ = select_features(fold_ds, cfg, run_seed, mode, autoencoder=shared)
            m = _score(fold_ds, ranking, k, cfg, run_seed)
            runs.append({"seed": run_seed, "repeat": rep, "fold": f, **m})
    params = {"experiment": "cv", "mode": mode, "k": k, "folds": folds, "repeats": repeats}
    return ExperimentResult(f"cv-{mode}-k{k}", digest, params, runs, time.perf_counter() - t0)


def stratified_folds(labels, folds, seed, repeat):
    """Index arrays (into ``labels``) of ``folds`` disjoint, class-balanced folds."""
    rng = make_rng(seed, "cv", repeat)
    assign = np.empty(labels.size, dtype=int)
    offset = 0
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        assign[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    return [np.flatnonzero(assign == f) for f in range(folds)]


def noise_robustness_sweep(dataset, noise_specs, k_range, cfg: PipelineConfig, seeds=(0,),
                           modes=("full",), digest="", sink=None, base_noise=()):
    """Run the pipeline on each corrupted copy of the data and score every k.

    Each entry of ``noise_specs`` is one NoiseSpec or a list of them applied
    in order (for combined settings). An empty list gives one clean setting.
    ``dataset`` is a Dataset or a callable ``seed -> Dataset``.
    """
    settings = [s if isinstance(s, (list, tuple)) else [s] for s in noise_specs] or [[]]
    results = []
    for setting in settings:
        label = "+".join(s.label for s in setting) or "clean"
        for mode in modes:
            t0 = time.perf_counter()
            rows = {k: [] for k in k_range}
            for seed in seeds:
                ds = noisy_copy(_resolve(dataset, seed), [*base_noise, *setting], seed)
                ranking, _ = select_features(ds, cfg, seed, mode)
                for k in k_range:
                    rows[k].append({"seed": seed, **_score(ds, ranking, k, cfg, seed)})
            elapsed = time.perf_counter() - t0
            for k in k_range:
                params = {"experiment": "noise", "noise": label, "mode": mode, "k": k}
                _emit(results, sink, ExperimentResult(
                    f"noise-{label}-{mode}-k{k}", digest, params, rows[k], elapsed / len(k_range)))
    return results


def label_budget_sweep(dataset, budgets, cfg: PipelineConfig, k=5, seeds=(0,), modes=("full",),
                       digest="", sink=None, noise=()):
    """Train the selector on ``budget`` labeled rows with a fixed unlabeled pool.

    The downstream classifier always trains on the full labeled partition, so
    a row measures only the quality of the selected subset.
    """
    results = []
    for budget in budgets:
        for mode in modes:
            t0 = time.perf_counter()
            runs = []
            for seed in seeds:
                ds = noisy_copy(_resolve(dataset, seed), noise, seed)
                if budget > ds.rows(LABELED).size:
                    raise DataError(f"budget {budget} exceeds {ds.rows(LABELED).size} labeled rows")
                sel_ds = subsample_labeled(ds, budget, seed)
                ranking, _ = select_features(sel_ds, cfg, seed, mode)
                runs.append({"seed": seed, **_score(ds, ranking, k, cfg, seed)})
            params = {"experiment": "budget", "budget": budget, "mode": mode, "k": k}
            _emit(results, sink, ExperimentResult(
                f"budget-{budget}-{mode}-k{k}", digest, params, runs, time.perf_counter() - t0))
    return results
