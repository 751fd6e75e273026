"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line with the measured numbers before
asserting, so ``pytest -v`` output doubles as a report.
"""
import os
import subprocess
import sys
import time

import numpy as np
import pytest
import yaml
from scipy.stats import ks_2samp

from asfs.data import LABELED, TEST, Dataset, SyntheticSpec, generate_synthetic, minmax_scale, partition
from asfs.gradcheck import check_gradients
from asfs.harness import (PipelineConfig, fisher_score, label_budget_sweep, noise_robustness_sweep, noisy_copy,
                          precision_at_k, select_features)
from asfs.masking import mask_and_corrupt
from asfs.nn import Sequential, loss_bce, loss_categorical_ce, loss_mse
from asfs.noise import NoiseSpec
from asfs.pretext import AutoencoderModel, PretextConfig, pretext_loss, pretrain, reconstruct
from asfs.rng import make_rng
from asfs.selector import (AttentionSelector, FeatureRanking, SelectorConfig, attention_scores, batch_weights,
                           selection_step, train_selector)

pytestmark = pytest.mark.acceptance

NOISY = [NoiseSpec("salt_pepper", amount=0.05), NoiseSpec("missing", fraction=0.3)]


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    return emit


def synthetic(seed, n_labeled=200, n_unlabeled=2000, n_test=1000, n_samples=None):
    n = n_samples or n_labeled + n_unlabeled + n_test
    ds = generate_synthetic(SyntheticSpec(n_samples=n, seed=seed))
    return minmax_scale(partition(ds, n_labeled, n_unlabeled, n_test, seed))


# 1 ------------------------------------------------------------ gradients


def _loss_instance(r, d):
    pred = r.uniform(0.05, 0.95, size=(4, d))
    target = r.uniform(size=(4, d))
    labels = r.integers(0, d, size=4)
    errs = []
    for fn, a, b in ((loss_mse, pred, target), (loss_bce, pred, (target > 0.5) * 1.0),
                     (loss_categorical_ce, pred * 4, labels)):
        _, g = fn(a, b)
        errs.append(max(check_gradients(lambda: fn(a, b)[0], {"pred": a}, {"pred": g}).values()))
    return max(errs)


def test_gradient_integrity(report):
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    modes = ["full", "no-location", "no-selfsup"]
    for i in range(120):
        r = make_rng(i, "acceptance-grad")
        d = int(r.integers(3, 11))
        h = int(r.integers(2, 9))
        z = int(r.integers(1, min(h, d - 1) + 1))
        mode = modes[i % 3]
        ae = None if mode == "no-selfsup" else AutoencoderModel(d, h, z, use_location=(mode == "full"), seed=i)
        if ae is not None:
            pool = r.uniform(size=(12, d))
            masked = mask_and_corrupt(pool, np.arange(5), 0.3, r)
            _, _, _, grads = pretext_loss(ae, masked)
            errs = check_gradients(lambda: pretext_loss(ae, masked)[0], ae.params(), grads)
            worst = max(worst, max(errs.values()))
        sel = AttentionSelector(d, 3, hidden=h, eval_widths=(h, 4), mode=mode, autoencoder=ae, seed=i)
        for layer in sel.evaluator.layers:
            layer.bias[:] = r.uniform(-0.2, 0.2, size=layer.bias.size)
        x, y = r.uniform(size=(5, d)), r.integers(0, 3, size=5)
        _, grads, _ = selection_step(sel, x, y)
        errs = check_gradients(lambda: selection_step(sel, x, y)[0], sel.trainable_params(), grads)
        net = Sequential.build([d, h, 2], ["tanh", "sigmoid"], r)
        xs = r.uniform(size=(4, d))
        target = r.uniform(size=(4, 2))
        acts = net.forward(xs)
        net_grads, _ = net.backward(acts, loss_mse(acts[-1], target)[1])
        net_errs = check_gradients(lambda: loss_mse(net(xs), target)[0], net.params(), net_grads)
        worst = max(worst, max(errs.values()), max(net_errs.values()), _loss_instance(r, d))
        count += 1
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and count >= 100 and elapsed < 60
    report(1, ok, f"{count} instances, worst relative error {worst:.2e}, {elapsed:.1f}s")
    assert ok


# 2 ------------------------------------------------------------- masking


def test_masking_statistics(report):
    pool = generate_synthetic(SyntheticSpec(n_samples=10_000, n_features=10, n_informative=5, seed=7)).features
    rows = np.arange(pool.shape[0])
    mb = mask_and_corrupt(pool, rows, 0.2, make_rng(0, "acceptance-mask"))
    frac = mb.mask.mean()
    member = all(np.isin(mb.corrupted[mb.mask[:, j] > 0, j], pool[:, j]).all() for j in range(pool.shape[1]))
    ks = max(ks_2samp(pool[:, j], mb.corrupted[:, j]).statistic for j in range(pool.shape[1]))
    ok = 0.19 <= frac <= 0.21 and member and ks < 0.05
    report(2, ok, f"{mb.mask.size} cells, masked fraction {frac:.4f}, pool membership {member}, max KS {ks:.4f}")
    assert ok


# 3 ------------------------------------------------------- normalization


def test_weight_normalization(report):
    ds = synthetic(0, n_labeled=200, n_unlabeled=400, n_test=0)
    worst, positive, steps = 0.0, True, 0

    def on_step(epoch, step, a, loss):
        nonlocal worst, positive, steps
        worst = max(worst, abs(a.sum() - 1))
        positive &= bool(np.all(a > 0))
        steps += 1

    ae = pretrain(AutoencoderModel(20, seed=0), ds, PretextConfig(epochs=2), seed=0)
    sel = AttentionSelector(20, 2, hidden=32, mode="full", autoencoder=ae, seed=0)
    sel, ranking = train_selector(sel, ds, SelectorConfig(epochs=100, hidden=32), on_step=on_step)
    scores = attention_scores(sel, ds.X(LABELED))
    shifts = [-100.0, -1.0, 0.5, 37.0]
    invariant = all(np.array_equal(FeatureRanking.from_weights(batch_weights(scores + c)).order, ranking.order)
                    for c in shifts)
    ok = worst < 1e-9 and positive and invariant
    report(3, ok, f"{steps} steps, max |sum(a) - 1| {worst:.1e}, all positive {positive}, "
                  f"shift invariant {invariant}")
    assert ok


# 4 ------------------------------------------------------ synthetic recovery


def test_synthetic_recovery(report):
    t0 = time.perf_counter()
    precisions = []
    for seed in range(5):
        ds = synthetic(seed, n_test=0)
        ranking, _ = select_features(ds, PipelineConfig(), seed, "full")
        precisions.append(precision_at_k(ranking.top_k(5), ds.informative))
    elapsed = time.perf_counter() - t0
    med = float(np.median(precisions))
    ok = med >= 0.8 and elapsed < 180
    report(4, ok, f"median precision@5 {med:.2f} (per seed {precisions}), {elapsed:.0f}s")
    assert ok


# 5 ------------------------------------------------------------ ablation


def test_ablation_direction(report):
    t0 = time.perf_counter()
    rows = noise_robustness_sweep(synthetic, [NOISY], [5], PipelineConfig(), seeds=range(5),
                                  modes=("full", "no-selfsup"))
    elapsed = time.perf_counter() - t0
    full, ablated = (r.aggregate["accuracy"]["median"] for r in rows)
    per_seed = [[round(p["accuracy"], 3) for p in r.per_seed] for r in rows]
    margin = full - ablated
    ok = margin >= 0 and elapsed < 600
    report(5, ok, f"median accuracy full {full:.4f} vs no-selfsup {ablated:.4f}, margin {margin:+.4f} "
                  f"(per seed {per_seed[0]} vs {per_seed[1]}), {elapsed:.0f}s")
    assert ok


# 6 ------------------------------------------------------- pretext learning


def test_pretext_learning(report):
    ratios = []
    for seed in range(5):
        ds = synthetic(seed, n_test=0)
        model = pretrain(AutoencoderModel(20, seed=seed), ds, PretextConfig(epochs=40), seed=seed)
        ratios.append(model.history[-1]["total"] / model.history[0]["total"])
    ratio = float(np.median(ratios))

    clean = synthetic(0)
    noisy = noisy_copy(clean, [NoiseSpec("salt_pepper", amount=0.1)], 0)
    model = pretrain(AutoencoderModel(20, seed=0), noisy, PretextConfig(epochs=40), seed=0)
    x_noisy, x_clean = noisy.X(TEST), clean.X(TEST)
    mae_input = float(np.abs(x_noisy - x_clean).mean())
    mae_recon = float(np.abs(reconstruct(model, x_noisy) - x_clean).mean())

    ok = ratio < 0.5 and mae_recon < mae_input
    report(6, ok, f"median loss ratio epoch 40 / epoch 1 {ratio:.3f} (per seed "
                  f"{[round(v, 3) for v in ratios]}); S&P 0.1 MAE corrupted {mae_input:.4f} "
                  f"vs reconstructed {mae_recon:.4f}")
    assert ok


# 7 ------------------------------------------------------------- fisher


def test_fisher_baseline(report):
    y = np.array([0, 0, 1, 1])
    # 0.2 and 0.8 are not binary fractions, so the literal example can only
    # agree to rounding; the same example scaled by 5 is exactly representable
    exact = fisher_score(np.array([[0.0], [1.0], [4.0], [5.0]]), y)[0]
    tiny = Dataset(np.array([[0.0], [0.2], [0.8], [1.0]]), y, partition=np.array([LABELED] * 4, dtype=object))
    literal = fisher_score(tiny)[0]
    hand_ok = exact == 16.0 and abs(literal - 16.0) <= 4 * np.spacing(16.0)
    ds = synthetic(3, n_labeled=1000, n_unlabeled=0, n_test=0)
    s = fisher_score(ds)
    info = list(ds.informative)
    noise = [j for j in range(ds.n_features) if j not in info]
    separated = bool(s[info].min() > s[noise].max())
    ok = hand_ok and separated
    report(7, ok, f"worked example score {exact!r} (decimal inputs {literal!r}), informative min {s[info].min():.3f} "
                  f"vs noise max {s[noise].max():.4f}")
    assert ok


# 8 ----------------------------------------------------------- determinism


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_cli_determinism(tmp_path, report):
    small = {
        "seed": 2, "k": 5,
        "data": {"n_labeled": 100, "n_unlabeled": 300, "n_test": 200, "synthetic": {"n_samples": 600}},
        "pretext": {"epochs": 3}, "selector": {"epochs": 20}, "downstream": {"epochs": 20},
        "noise": [n.to_dict() for n in NOISY],
        "sweep": {"k_range": [3, 5], "modes": ["full", "no-selfsup"]},
    }
    env = {**os.environ, "PYTHONHASHSEED": "random"}
    trees = []
    for name in ("first", "second"):
        path = tmp_path / f"{name}.yaml"
        path.write_text(yaml.safe_dump({**small, "output_dir": str(tmp_path / name)}))
        for cmd in ("pretrain", "select", "evaluate", "corrupt", "sweep"):
            subprocess.run([sys.executable, "-m", "asfs.cli", cmd, "--config", str(path), "--quiet"],
                           check=True, env=env)
        trees.append(_tree(tmp_path / name))
    same = trees[0].keys() == trees[1].keys() and all(trees[0][k] == trees[1][k] for k in trees[0])
    kinds = sorted({p.suffix for p in trees[0]})
    ok = same and {".ckpt", ".csv", ".jsonl"} <= set(kinds)
    report(8, ok, f"{len(trees[0])} artifacts ({', '.join(kinds)}) byte-identical across reruns: {same}")
    assert ok


# 9 ------------------------------------------------------- label budget


def test_label_budget_direction(report):
    t0 = time.perf_counter()

    def make(seed):
        return synthetic(seed, n_labeled=600, n_samples=3600)

    full = label_budget_sweep(make, [200], PipelineConfig(), seeds=range(5), modes=("full",), noise=NOISY)[0]
    base = label_budget_sweep(make, [600], PipelineConfig(), seeds=range(5), modes=("no-selfsup",), noise=NOISY)[0]
    elapsed = time.perf_counter() - t0
    a, b = full.aggregate["accuracy"]["median"], base.aggregate["accuracy"]["median"]
    prec = [r.aggregate["precision_at_k"]["median"] for r in (full, base)]
    ok = a >= b and elapsed < 900
    report(9, ok, f"median accuracy full@200 {a:.4f} vs no-selfsup@600 {b:.4f}, margin {a - b:+.4f} "
                  f"(median precision@5 {prec[0]:.1f} vs {prec[1]:.1f}), {elapsed:.0f}s")
    assert ok
