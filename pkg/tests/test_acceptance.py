"""Acceptance suite: one test per shipped criterion, each printing a
pass/fail line. Run with `pytest tests/test_acceptance.py -v -s`.

The end-to-end criterion trains on a generated 200-image dataset and
takes a few minutes; everything else is fast.
"""

import math
import time

import numpy as np
import pytest

from pretextseg.config import TrainConfig
from pretextseg.data import generate_synthetic
from pretextseg.errors import FormatError
from pretextseg.losses import cross_entropy, mse_loss
from pretextseg.metrics import ConfusionMatrix, miou, miou_oracle
from pretextseg.netpbm import read_pgm, read_ppm, write_pgm, write_ppm
from pretextseg.norms import (
    NormParams,
    SwitchableWeights,
    _softmax3,
    batch_norm,
    group_norm,
    instance_norm,
    layer_norm,
    switchable_norm,
)
from pretextseg.pretext import (
    apply_tile_permutation,
    build_catalogue,
    build_palette,
    invert_permutation,
    make_denoising,
    make_inpainting,
    make_jigsaw,
    quantize_colors,
)
from pretextseg.tensor import (
    Tensor,
    conv2d,
    exp,
    grad_check,
    linear,
    log,
    relu,
    sqrt,
    upsample_nearest,
)
from pretextseg.train import Trainer, constant_baseline, train
from pretextseg.checkpoint import read_container


def _verdict(name, ok, detail=""):
    suffix = f" ({detail})" if detail else ""
    print(f"\n[acceptance] {name}: {'PASS' if ok else 'FAIL'}{suffix}")
    assert ok, f"{name} failed{suffix}"


@pytest.fixture(scope="module")
def shapes200(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance") / "shapes200"
    return generate_synthetic(root, n=200, nb_classes=4, size=(32, 32), seed=42,
                              labeled_fraction=0.1, val_fraction=0.2)


# -- criterion 1: gradient integrity ----------------------------------------


def test_criterion_1_gradient_integrity():
    started = time.perf_counter()
    tol = 1e-4
    failures = []

    def check(name, f, x):
        report = grad_check(f, x, h=1e-5, tol=tol)
        if not report.passed:
            failures.append(f"{name}: {report.max_rel_error:.2e}")

    for seed in range(20):
        rng = np.random.default_rng(seed)

        def leaf(shape, lo=-2.0, hi=2.0):
            return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)

        other = Tensor(rng.uniform(0.5, 2.0, (2, 3)))
        check("add", lambda t: (t + other).mean(), leaf((2, 3)))
        check("sub", lambda t: (t - other).mean(), leaf((2, 3)))
        check("mul", lambda t: (t * other).mean(), leaf((2, 3)))
        check("div", lambda t: (t / other).mean(), leaf((2, 3)))
        check("rdiv", lambda t: (other / t).mean(), leaf((2, 3), 0.5, 2.0))
        check("neg", lambda t: (-t).mean(), leaf((2, 3)))
        check("exp", lambda t: exp(t).mean(), leaf((2, 3), -1.0, 1.0))
        check("log", lambda t: log(t).mean(), leaf((2, 3), 0.3, 3.0))
        check("sqrt", lambda t: sqrt(t).mean(), leaf((2, 3), 0.3, 3.0))
        check("relu", lambda t: relu(t).mean(), leaf((2, 3)))
        check("sum", lambda t: t.sum(axis=1).mean(), leaf((2, 3)))
        check("mean", lambda t: t.mean(axis=0, keepdims=True).sum(), leaf((2, 3)))
        check("reshape", lambda t: (t.reshape(3, 2) * other.reshape(3, 2)).mean(), leaf((2, 3)))
        check("getitem", lambda t: t[1].sum(), leaf((2, 3)))
        check("upsample", lambda t: (upsample_nearest(t, 2) * 0.5).mean(), leaf((1, 2, 3, 3)))

        lw = Tensor(rng.uniform(-1, 1, (3, 4)))
        lb = Tensor(rng.uniform(-1, 1, 4))
        lx = Tensor(rng.uniform(-1, 1, (2, 3)))
        check("linear_x", lambda t: linear(t, lw, lb).mean(), leaf((2, 3)))
        check("linear_w", lambda t: linear(lx, t, lb).mean(), leaf((3, 4)))
        check("linear_b", lambda t: linear(lx, lw, t).mean(), leaf((4,)))

        cw = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)))
        cb = Tensor(rng.uniform(-1, 1, 3))
        cx = Tensor(rng.uniform(-1, 1, (1, 2, 4, 4)))
        check("conv_x", lambda t: conv2d(t, cw, cb, 1, 1).mean(), leaf((1, 2, 4, 4)))
        check("conv_w", lambda t: conv2d(cx, t, cb, 2, 1).mean(), leaf((3, 2, 3, 3)))
        check("conv_b", lambda t: conv2d(cx, cw, t, 1, 0).mean(), leaf((3,)))

        mt = rng.uniform(-1, 1, (2, 3))
        check("mse", lambda t: mse_loss(t, mt), leaf((2, 3)))
        ct = rng.integers(0, 3, (2, 2, 2))
        check("cross_entropy", lambda t: cross_entropy(t, ct), leaf((2, 3, 2, 2)))

        xfix = Tensor(rng.uniform(-2, 2, (2, 4, 3, 3)))

        def _params(gamma=None, beta=None):
            p = NormParams.create(4)
            if gamma is not None:
                p.gamma = gamma
            if beta is not None:
                p.beta = beta
            return p

        def _squared_mean(out):
            return (out * out).mean()

        def norm_checks(kind, apply):
            check(f"{kind}_x", lambda t: _squared_mean(apply(t, _params())),
                  leaf((2, 4, 3, 3)))
            check(f"{kind}_gamma",
                  lambda t: _squared_mean(apply(xfix, _params(gamma=t))),
                  Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True))
            check(f"{kind}_beta",
                  lambda t: _squared_mean(apply(xfix, _params(beta=t))),
                  Tensor(rng.uniform(-0.5, 0.5, 4), requires_grad=True))

        norm_checks("batch", lambda x, p: batch_norm(x, p, training=True))
        norm_checks("layer", lambda x, p: layer_norm(x, p))
        norm_checks("instance", lambda x, p: instance_norm(x, p))
        norm_checks("group", lambda x, p: group_norm(x, p, groups=2))
        sw = SwitchableWeights()
        norm_checks("switchable", lambda x, p: switchable_norm(x, p, sw, training=True))

        def switch_logit_loss(t):
            w = SwitchableWeights(logits_mean=t, logits_var=t)
            out = switchable_norm(xfix, NormParams.create(4), w, training=True)
            return (out * out).mean()

        check("switchable_logits", switch_logit_loss,
              Tensor(rng.uniform(-1, 1, 3), requires_grad=True))

    elapsed = time.perf_counter() - started
    _verdict(
        "criterion 1: gradient integrity",
        not failures and elapsed < 60.0,
        f"20 seeds, all ops and norms, tol {tol}, {elapsed:.1f}s"
        + (f"; failures: {failures[:5]}" if failures else ""),
    )


# -- criterion 2: norm identities --------------------------------------------


def test_criterion_2_norm_identities():
    rng = np.random.default_rng(7)
    x = Tensor(rng.uniform(-3, 3, (3, 4, 5, 5)))
    p = NormParams.create(4, eps=1e-12)

    g1 = group_norm(x, p, groups=1).data
    ln = layer_norm(x, p).data
    gC = group_norm(x, p, groups=4).data
    inn = instance_norm(x, p).data
    ok_ident = np.abs(g1 - ln).max() <= 1e-12 and np.abs(gC - inn).max() <= 1e-12

    ok_stats = True
    for out, axes in ((batch_norm(x, p, True).data, (0, 2, 3)),
                      (ln, (1, 2, 3)), (inn, (2, 3))):
        ok_stats &= np.abs(out.mean(axis=axes)).max() <= 1e-10
        ok_stats &= np.abs(out.var(axis=axes) - 1.0).max() <= 1e-6

    w_eq = _softmax3(Tensor(np.zeros(3))).data
    ok_simplex = abs(w_eq.sum() - 1.0) <= 1e-12
    saturated = SwitchableWeights(
        logits_mean=Tensor(np.array([20.0, -20.0, -20.0])),
        logits_var=Tensor(np.array([20.0, -20.0, -20.0])),
    )
    p2 = NormParams.create(4)
    sn = switchable_norm(x, p2, saturated, training=True).data
    bn = batch_norm(x, p2, training=True).data
    ok_saturated = np.abs(sn - bn).max() <= 1e-6

    _verdict(
        "criterion 2: norm identities",
        ok_ident and ok_stats and ok_simplex and ok_saturated,
        "group(1)=layer, group(C)=instance, standardized axes, switchable simplex+saturation",
    )


# -- criterion 3: mIoU oracle equivalence ------------------------------------


def test_criterion_3_miou_oracle_equivalence():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 9))
        # draw from a random subset of labels so some classes are absent
        usable = rng.permutation(k)[: int(rng.integers(1, k + 1))]
        gt = usable[rng.integers(0, len(usable), (64, 64))]
        pred = np.where(rng.random((64, 64)) < 0.6, gt,
                        usable[rng.integers(0, len(usable), (64, 64))])
        cm = ConfusionMatrix.empty(k)
        cm.add(gt, pred)
        worst = max(worst, abs(miou(cm) - miou_oracle(gt, pred, k)))
    cm = ConfusionMatrix(2, np.array([[1, 1], [0, 2]], dtype=np.int64))
    worked = abs(miou(cm) - 7 / 12) <= 1e-12
    _verdict(
        "criterion 3: mIoU oracle equivalence",
        worst <= 1e-12 and worked,
        f"100 mask pairs, max |cm - oracle| = {worst:.2e}, worked example 7/12",
    )


# -- criterion 4: pretext purity ----------------------------------------------


def test_criterion_4_pretext_purity():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (3, 64, 64))

    sample = make_inpainting(img, np.random.default_rng(1), side=16)
    t, l, s = sample.meta["top"], sample.meta["left"], sample.meta["side"]
    keep = np.ones((64, 64), dtype=bool)
    keep[t : t + s, l : l + s] = False
    ok_inpaint = np.array_equal(sample.input[:, keep], img[:, keep]) and np.array_equal(
        sample.target, img
    )

    flat = np.full((3, 64, 64), 0.5)
    den = make_denoising(flat, np.random.default_rng(2), sigma=0.1)
    noise = den.input - den.target
    ok_denoise = (
        np.array_equal(den.target, flat)
        and abs(noise.std() - 0.1) <= 0.005  # 5% of sigma
    )

    cat = build_catalogue(4, 32, seed=3)
    jig = make_jigsaw(img, cat, np.random.default_rng(4))
    restored = apply_tile_permutation(jig.input, 4, invert_permutation(jig.target))
    ok_jigsaw = np.array_equal(restored, img)

    levels = 16
    anchors = (np.random.default_rng(5).integers(0, levels, (12, 3)) + 0.5) / levels
    corpus = [
        np.clip(a[:, None, None] + np.random.default_rng(10 + i).uniform(
            -0.4 / levels, 0.4 / levels, (3, 8, 8)), 0, 1)
        for i, a in enumerate(anchors)
    ]
    palette = build_palette(corpus, nb_bins=16, levels=levels)
    ok_color = True
    for image in corpus:
        classes = quantize_colors(image, palette)
        recon = palette.centers[classes].transpose(2, 0, 1)
        ok_color &= np.abs(recon - image).max() <= 1.0 / levels

    _verdict(
        "criterion 4: pretext purity",
        ok_inpaint and ok_denoise and ok_jigsaw and ok_color,
        "inpaint bit-equality, noise sigma 5%, jigsaw inverse, palette round-trip",
    )


# -- criterion 5: loss anchors -------------------------------------------------


def test_criterion_5_loss_anchors():
    uniform = cross_entropy(Tensor(np.zeros((2, 4, 3))), np.zeros((2, 3), dtype=int))
    ok_uniform = abs(uniform.item() - math.log(4)) <= 1e-9

    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, (3, 5))
    ok_mse = mse_loss(Tensor(x), x).item() == 0.0

    z = rng.uniform(-2, 2, (2, 5, 4))
    t = rng.integers(0, 5, (2, 4))
    drift = abs(
        cross_entropy(Tensor(z), t).item() - cross_entropy(Tensor(z + 777.0), t).item()
    )
    ok_shift = drift <= 1e-10

    _verdict(
        "criterion 5: loss anchors",
        ok_uniform and ok_mse and ok_shift,
        f"CE(uniform,4)=ln4, MSE identity 0, CE shift drift {drift:.1e}",
    )


# -- criterion 6: end-to-end training smoke ------------------------------------


def test_criterion_6_end_to_end(shapes200, tmp_path):
    base = dict(dataset=str(shapes200.root), seed=1, lr=0.1, momentum=0.9, epochs=20)

    started = time.perf_counter()
    supervised = train(TrainConfig(tasks=("segmentation",), batch_labeled=8,
                                   batch_unlabeled=0, **base))
    sup_time = time.perf_counter() - started
    sup_miou = supervised.rows[-1].val_miou

    _, baseline = constant_baseline(shapes200, "val")

    started = time.perf_counter()
    multi_cfg = TrainConfig(
        tasks=("segmentation", "inpainting", "denoising", "colorization", "jigsaw"),
        batch_labeled=8, batch_unlabeled=8, jigsaw_grid=2, jigsaw_perms=24,
        eval_every=5, **base,
    )
    multitask = train(multi_cfg)
    multi_time = time.perf_counter() - started
    multi_miou = multitask.rows[-1].val_miou

    full_report = len(multitask.rows) == 20 and all(
        all(r.losses[t] is not None for t in multi_cfg.tasks) for r in multitask.rows
    )

    comparison = tmp_path / "comparison.csv"
    with open(comparison, "w") as fh:
        fh.write("run,val_miou,val_pixacc,seconds\n")
        fh.write(f"supervised,{supervised.rows[-1].val_miou!r},"
                 f"{supervised.rows[-1].val_pixacc!r},{sup_time:.1f}\n")
        fh.write(f"multitask,{multi_miou!r},{multitask.rows[-1].val_pixacc!r},"
                 f"{multi_time:.1f}\n")
        fh.write(f"constant_baseline,{baseline!r},,\n")
    print(f"\n[acceptance] comparison CSV at {comparison}:")
    print(comparison.read_text())

    _verdict(
        "criterion 6: end-to-end training",
        sup_miou >= 0.5 and baseline < sup_miou and full_report
        and sup_time < 600 and multi_time < 600,
        f"supervised mIoU {sup_miou:.3f} (baseline {baseline:.3f}) in {sup_time:.0f}s; "
        f"multitask mIoU {multi_miou:.3f} in {multi_time:.0f}s, no NaN",
    )


# -- criterion 7: determinism & persistence -------------------------------------


def test_criterion_7_determinism_and_persistence(tmp_path):
    dataset = generate_synthetic(tmp_path / "d", n=24, nb_classes=4, size=(16, 16),
                                 seed=11, labeled_fraction=0.25, val_fraction=0.25)
    cfg = TrainConfig(dataset=str(dataset.root),
                      tasks=("segmentation", "inpainting", "jigsaw"),
                      batch_labeled=3, batch_unlabeled=3, epochs=3, seed=5,
                      jigsaw_grid=2, jigsaw_perms=8, inpaint_side=4)

    def rows_no_seconds(report):
        return [report.row_cells(r)[:-1] for r in report.rows]

    a = train(cfg)
    b = train(cfg)
    ok_identical = rows_no_seconds(a) == rows_no_seconds(b)

    partial = Trainer(cfg)
    for _ in range(4):  # stop mid-epoch
        partial.train_step()
    ck = tmp_path / "mid.pxl"
    partial.save(ck)
    resumed = Trainer(cfg)
    resumed.resume(ck)
    resumed_report = resumed.run()
    ok_resume_rows = rows_no_seconds(a) == rows_no_seconds(resumed_report)

    straight = Trainer(cfg)
    straight_report = straight.run()
    ok_params = all(
        np.array_equal(p1.data, p2.data)
        for (_, p1), (_, p2) in zip(
            straight.model.named_parameters(), resumed.model.named_parameters()
        )
    ) and rows_no_seconds(straight_report) == rows_no_seconds(resumed_report)

    _verdict(
        "criterion 7: determinism & persistence",
        ok_identical and ok_resume_rows and ok_params,
        "bit-identical reports (wall-time column excluded); mid-epoch resume invisible",
    )


# -- criterion 8: format fidelity ------------------------------------------------


def test_criterion_8_format_fidelity(tmp_path):
    rng = np.random.default_rng(3)

    mask = rng.integers(0, 7, (9, 5))
    write_pgm(tmp_path / "m.pgm", mask)
    ok_pgm = np.array_equal(read_pgm(tmp_path / "m.pgm"), mask)

    img = rng.uniform(0, 1, (3, 6, 8))
    write_ppm(tmp_path / "i.ppm", img)
    ok_ppm = np.abs(read_ppm(tmp_path / "i.ppm") - img).max() <= 1.0 / 510

    ok_headers = True
    cases = [
        (b"P7\n1 1\n255\n\x00\x00\x00", 0),         # wrong magic
        (b"P6\n1 x\n255\n\x00\x00\x00", 5),         # non-numeric field
        (b"P6\n1 1\n255\n\x00", 11 + 1),            # truncated payload
    ]
    for blob, want_offset in cases:
        (tmp_path / "bad.ppm").write_bytes(blob)
        try:
            read_ppm(tmp_path / "bad.ppm")
            ok_headers = False
        except FormatError as err:
            ok_headers &= err.offset == want_offset

    ok_ckpt = True
    (tmp_path / "bad.pxl").write_bytes(b"NOPE" + b"\x00" * 12)
    try:
        read_container(tmp_path / "bad.pxl")
        ok_ckpt = False
    except FormatError:
        pass
    from pretextseg.checkpoint import write_container

    write_container(tmp_path / "ok.pxl", {"t": np.ones((2, 2))})
    (tmp_path / "cut.pxl").write_bytes((tmp_path / "ok.pxl").read_bytes()[:-5])
    try:
        read_container(tmp_path / "cut.pxl")
        ok_ckpt = False
    except FormatError:
        pass

    _verdict(
        "criterion 8: format fidelity",
        ok_pgm and ok_ppm and ok_headers and ok_ckpt,
        "PGM lossless, PPM half-step, positioned header errors, checkpoint corruption",
    )
