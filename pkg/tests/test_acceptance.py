"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line; the lines are printed together in
the terminal summary (see conftest.py) and echoed immediately under ``-s``.
"""
import math
import time

import numpy as np
import pytest

from conftest import TOL32, TOL64, separated
from oracles import conv2d_loops, dft2_naive, jsd_direct, sffm_oracle, smsa_loops, ssim_direct, uiqi_direct
from mtsic import functional as F
from mtsic import metrics as M
from mtsic import objectives as O
from mtsic.attention import SARB, SMSA, SpatialMSA, flop_count
from mtsic.config import TrainConfig
from mtsic.data import generate_dataset, load_pairs, read_cube, write_cube
from mtsic.discriminator import DiscConfig, Discriminator
from mtsic.evaluate import evaluate_model
from mtsic.generator import MTSIC, GeneratorConfig, STformer
from mtsic.gradcheck import grad_check, grad_check_params
from mtsic.mswb import MSWB, SFFM
from mtsic.tensor import Tensor, exp, gelu, log, precision, sigmoid, softmax, sqrt, tabs
from mtsic.train import build_models, train_on_pairs
from mtsic.wavelet import haar_dwt2, haar_idwt2

RESULTS: dict[int, str] = {}

# the toy setting: 8 bands, 64×64 crops, C=8, dim=32, three stages
TOY = TrainConfig(lr=1e-3, epochs=60, decay_start=30, seed=0)
TOY_ITERS = 200
STAGE_ITERS = 100


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def toy_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    generate_dataset(root / "train", seed=1, count=6, bands=8, size=112)
    generate_dataset(root / "test", seed=2, count=3, bands=8, size=64)
    return load_pairs(root / "train"), load_pairs(root / "test")


def held_out_psnr(gen, pairs) -> float:
    return evaluate_model(gen, pairs).aggregate()["psnr"]


# --------------------------------------------------------------------------- 1. gradient suite


def _op_cases(rng, dtype):
    x = Tensor(separated(rng, (3, 6, 6), -2, 2, gap=0.02).astype(dtype))
    w = Tensor(rng.standard_normal((2, 3, 3, 3)).astype(dtype))
    wd = Tensor(rng.standard_normal((3, 1, 3, 3)).astype(dtype))
    wt = Tensor(rng.standard_normal((3, 2, 2, 2)).astype(dtype))
    taps = Tensor(rng.standard_normal((3, 3)).astype(dtype))
    lnw, lnb = Tensor(rng.uniform(0.5, 1.5, 3).astype(dtype)), Tensor(rng.standard_normal(3).astype(dtype))
    pos = Tensor(rng.uniform(0.5, 2.0, (3, 6, 6)).astype(dtype))
    return [
        ("add_mul_div", lambda t: (t + 1.5) * t / (t * t + 1.0), x),
        ("exp_log_sqrt", lambda t: exp(t * 0.3) + log(t) + sqrt(t), pos),
        ("abs", tabs, x),
        ("sigmoid", sigmoid, x),
        ("gelu", gelu, x),
        ("softmax", lambda t: softmax(t, axis=0), x),
        ("matmul", lambda t: t.reshape((3, 36)) @ t.reshape((3, 36)).transpose(), x),
        ("sum_mean_max", lambda t: t.sum(axis=0) + t.mean(axis=1).sum() + t.max(axis=2).sum(), x),
        ("conv2d", lambda t: F.conv2d(t, w, pad=1), x),
        ("conv2d_strided", lambda t: F.conv2d(t, w, stride=2, pad=1), x),
        ("depthwise", lambda t: F.conv2d(t, wd, pad=1, groups=3), x),
        ("taps", lambda t: F.depthwise_taps(t, taps, [(0, 0), (-1, 1), (1, 1)]), x),
        ("conv_transpose", lambda t: F.conv_transpose2d(t, wt), x),
        ("max_pool", lambda t: F.max_pool2d(t, 3), x),
        ("avg_pool", lambda t: F.avg_pool2d(t, 3), x),
        ("resize", lambda t: F.resize(t, (9, 4)), x),
        ("layer_norm", lambda t: F.layer_norm(t, lnw, lnb), x),
        ("batch_norm", lambda t: F.batch_norm(t, lnw, lnb, np.zeros(3), np.ones(3), True), x),
        ("fft2", lambda t: F.fft2(t)[0] + F.fft2(t)[1] * 0.5, x),
        ("haar_dwt", lambda t: haar_dwt2(t).ll + haar_dwt2(t).hh, x),
        ("haar_idwt", lambda t: haar_idwt2(haar_dwt2(t * t)), x),
    ]


def _block_cases(rng, dtype):
    """(name, error thunk) for every composite block and every loss."""
    with precision(dtype):
        smsa = SMSA(8, 4, rng)
        sarb = SARB(8, 4, rng)
        sffm = SFFM(4, rng)
        mswb = MSWB(4, rng, reduction=2).eval()
        stformer = STformer(8, rng, GeneratorConfig(dim=8, head_dim=4))
        disc = Discriminator(DiscConfig(bands=4, scales=2, base_channels=4, max_channels=8, hidden=8), rng)
    cast = lambda a: Tensor(np.asarray(a).astype(dtype))
    y8 = cast(rng.standard_normal((8, 4, 4)) * 0.5)
    ys, yf = cast(rng.standard_normal((4, 8, 8))), cast(rng.standard_normal((4, 4, 4)))
    z = cast(rng.standard_normal((4, 8, 8)))
    s16 = cast(rng.standard_normal((8, 16, 16)) * 0.5)
    img, cube = cast(rng.standard_normal((3, 16, 16))), cast(rng.standard_normal((4, 16, 16)))
    gt_np = separated(rng, (3, 16, 16), -0.9, 0.9, gap=1e-3)
    gt = cast(gt_np)
    gen = cast(np.clip(gt_np + rng.choice([-1, 1], gt_np.shape) * rng.uniform(0.05, 0.3, gt_np.shape), -1, 1))
    logits = cast(rng.standard_normal((2, 3)))

    def params(module, out_fn, *inputs, n=120):
        proj = cast(rng.standard_normal(out_fn().shape))
        return grad_check_params(lambda: (out_fn() * proj).sum(), module.parameters(), constants=[*inputs, proj], max_components=n)

    losses = {
        "cgan_d": lambda t: O.disc_loss(t, logits),
        "cgan_g": O.gen_adv_loss,
    }
    image_losses = {
        "pix": lambda g: O.pixel_l1(g, gt),
        "sam": lambda g: O.sam_loss(g, gt),
        "fft": lambda g: O.fft_loss(g, gt),
        "edge": lambda g: O.edge_loss(g, gt),
        "tv": O.tv_loss,
        "ssim": lambda g: O.ssim_loss(g, gt),
        "per": lambda g: O.perceptual_loss(g, gt, cube, disc),
    }
    cases = [
        ("SMSA.input", lambda: grad_check(smsa, y8)),
        ("SMSA.params", lambda: params(smsa, lambda: smsa(y8), y8)),
        ("SARB.input", lambda: grad_check(sarb, y8, max_components=60)),
        ("SARB.params", lambda: params(sarb, lambda: sarb(y8), y8)),
        ("SFFM.inputs", lambda: max(grad_check(lambda t: sffm(t, yf), ys, max_components=60),
                                    grad_check(lambda t: sffm(ys, t), yf, max_components=60))),
        ("SFFM.params", lambda: params(sffm, lambda: sffm(ys, yf), ys, yf)),
        ("MSWB.input", lambda: grad_check(mswb, z, max_components=60)),
        ("MSWB.params", lambda: params(mswb, lambda: mswb(z), z)),
        ("STformer.params", lambda: params(stformer, lambda: stformer(s16), s16, n=100)),
        ("discriminator.input", lambda: grad_check(lambda t: disc(t, cube).scores, img, max_components=60)),
        ("discriminator.params", lambda: params(disc, lambda: disc(img, cube).scores, img, cube)),
    ]
    cases += [(f"loss.{k}", (lambda f=f: grad_check(f, logits))) for k, f in losses.items()]
    cases += [(f"loss.{k}", (lambda f=f: grad_check(f, gen, eps=1e-5, max_components=80))) for k, f in image_losses.items()]
    return cases


def test_criterion_01_gradient_suite():
    t0 = time.perf_counter()
    failures, worst = [], {}
    for dtype, tol in ((np.float64, TOL64), (np.float32, TOL32)):
        rng = np.random.default_rng(101)
        errs = [(n, grad_check(f, x)) for n, f, x in _op_cases(rng, dtype)]
        errs += [(n, thunk()) for n, thunk in _block_cases(rng, dtype)]
        worst[np.dtype(dtype).name] = max(e for _, e in errs)
        failures += [f"{np.dtype(dtype).name}:{n}={e:.2g}" for n, e in errs if not e < tol]
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 300
    detail = f"{len(errs)} checks per precision, worst f64={worst['float64']:.2g} f32={worst['float32']:.2g}, {elapsed:.0f}s"
    record(1, ok, detail + (f" failures: {failures}" if failures else ""))


# --------------------------------------------------------------------------- 2. wavelet suite


def test_criterion_02_wavelet_suite():
    rng = np.random.default_rng(202)
    recon, parseval = 0.0, 0.0
    with precision(np.float32):
        for _ in range(100):
            c, h, w = rng.integers(1, 5), 2 * rng.integers(1, 9), 2 * rng.integers(1, 9)
            x = Tensor(rng.standard_normal((c, h, w)).astype(np.float32))
            bands = haar_dwt2(x)
            recon = max(recon, float(np.abs(haar_idwt2(bands).data - x.data).max()))
            energy = sum(float((b.data.astype(np.float64) ** 2).sum()) for b in (bands.ll, bands.lh, bands.hl, bands.hh))
            ref = float((x.data.astype(np.float64) ** 2).sum())
            parseval = max(parseval, abs(energy - ref) / ref)
    record(2, recon <= 1e-6 and parseval <= 1e-5, f"100 inputs at float32, max recon err {recon:.2g}, max Parseval rel err {parseval:.2g}")


# --------------------------------------------------------------------------- 3. attention suite


def test_criterion_03_attention_suite():
    rng = np.random.default_rng(303)
    col_err = 0.0
    for normalize in (True, False):
        m = SMSA(16, 4, rng, normalize=normalize)
        m.sigma.data[...] = rng.uniform(0.5, 2.0, m.sigma.shape)
        a, a_global, _, _ = m.attention(Tensor(rng.standard_normal((64, 16)).astype(np.float32)))
        col_err = max(col_err, float(np.abs(a.data.sum(axis=1) - 1).max()), float(np.abs(a_global.data.sum(axis=0) - 1).max()))
    _, a_spatial = SpatialMSA(16, 4, rng).attend(Tensor(rng.standard_normal((2, 10, 16)).astype(np.float32)))
    col_err = max(col_err, float(np.abs(a_spatial.data.sum(axis=2) - 1).max()))

    sizes = [64, 256, 1024]
    side = {n: int(math.isqrt(n)) for n in sizes}
    slope = lambda kind, a, b: math.log(flop_count(kind, side[b], side[b], 32, 8) / flop_count(kind, side[a], side[a], 32, 8)) / math.log(b / a)
    smsa_slopes = [slope("smsa", a, b) for a, b in zip(sizes, sizes[1:])]
    gmsa_slopes = [slope("gmsa", a, b) for a, b in zip(sizes, sizes[1:])]
    # global attention: the part beyond the per-token projections is exactly quadratic in HW
    gmsa_quad = [flop_count("gmsa", side[n], side[n], 32, 8) - 8 * n * 32 * 32 for n in sizes]
    linear = all(abs(s - 1) <= 0.05 for s in smsa_slopes)
    quadratic = gmsa_quad[1] == 16 * gmsa_quad[0] and gmsa_quad[2] == 16 * gmsa_quad[1] and gmsa_slopes[-1] > 1.5
    ok = col_err <= 1e-6 and linear and quadratic
    record(3, ok, f"column sum err {col_err:.2g}; SMSA log-log slopes {[round(s, 4) for s in smsa_slopes]}, "
                  f"G-MSA slopes {[round(s, 3) for s in gmsa_slopes]} (quadratic remainder {quadratic})")


# --------------------------------------------------------------------------- 4. identity and zero contracts


def test_criterion_04_identity_skip():
    rng = np.random.default_rng(404)
    x = Tensor(rng.standard_normal((8, 8, 8)).astype(np.float32))
    m = MSWB(8, rng).zero_()
    train_err = float(np.abs(m(x).data - x.data).max())
    eval_err = float(np.abs(m.eval()(x).data - x.data).max())
    g = MTSIC(GeneratorConfig(bands=8, base_channels=8, dim=32, stages=3, head_dim=8), 0).zero_()
    gen_out = g(Tensor(rng.standard_normal((8, 16, 16)).astype(np.float32))).data
    ok = train_err == 0 and eval_err == 0 and not np.any(gen_out)
    record(4, ok, f"zero MSWB identity err train={train_err} eval={eval_err}; zero generator max |out| {np.abs(gen_out).max()}")


# --------------------------------------------------------------------------- 5. oracle equivalence


def test_criterion_05_oracle_equivalence():
    worst = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    with precision(np.float64):
        for i in range(20):
            r = np.random.default_rng(5000 + i)
            c, h, w = (int(v) for v in r.integers(1, 4, 3) + np.array([0, 3, 3]))
            x, k = r.standard_normal((c, h, w)), r.standard_normal((2, c, 3, 3))
            b, stride, pad = r.standard_normal(2), int(r.integers(1, 3)), int(r.integers(0, 2))
            out = F.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride, pad=pad).data
            note("conv2d", float(np.abs(out - conv2d_loops(x, k, b, stride, pad)).max()))

            img = r.standard_normal((int(r.integers(1, 7)), int(r.integers(1, 7))))
            re, im = F.fft2(Tensor(img))
            ref = dft2_naive(img)
            note("fft2", float(max(np.abs(re.data - ref.real).max(), np.abs(im.data - ref.imag).max())))

            sm = SMSA(8, 4, r, normalize=bool(i % 2))
            sm.sigma.data[...] = r.uniform(0.5, 2.0, sm.sigma.shape)
            xs = r.standard_normal((8, 4, 4))
            pe = (sm.pe1.weight.data, sm.pe1.bias.data, sm.pe2.weight.data, sm.pe2.bias.data)
            ref = smsa_loops(xs, sm.wq.data, sm.wk.data, sm.wv.data, sm.w_out.data, sm.sigma.data,
                             float(sm.sigma_global.data[0]), sm.head_dim, normalize=sm.normalize, pe=pe)
            note("SMSA", float(np.abs(sm(Tensor(xs)).data - ref).max()))

            sf = SFFM(4, r)
            ys, yf = r.standard_normal((4, 8, 8)), r.standard_normal((4, 4, 4))
            note("SFFM", float(np.abs(sf(Tensor(ys), Tensor(yf)).data - sffm_oracle(sf, ys, yf)).max()))

            a = r.uniform(-1, 1, (2, 12, 13))
            bb = np.clip(a + r.normal(0, 0.4, a.shape), -1, 1)
            note("SSIM", abs(1 - O.ssim_loss(Tensor(a), Tensor(bb)).item() - ssim_direct(a, bb, 2.0)))

            a = r.uniform(0.05, 1, (2, 10, 11))
            bb = np.clip(a + r.normal(0, 0.2, a.shape), 0.01, 1)
            window = int(r.choice([3, 8]))
            note("UIQI", abs(M.uiqi(a, bb, window=window) - uiqi_direct(a, bb, window)))

            n = int(r.integers(2, 30))
            p, q = r.dirichlet(np.ones(n)), r.dirichlet(np.ones(n))
            note("ColorJSD", abs(M.colorjsd(p, q) - jsd_direct(p.tolist(), q.tolist())))
    tolerances = {"conv2d": 1e-9, "fft2": 1e-9, "SMSA": 1e-5, "SFFM": 1e-5, "SSIM": 1e-6, "UIQI": 1e-6, "ColorJSD": 1e-12}
    ok = all(worst[k] <= tol for k, tol in tolerances.items())
    record(5, ok, "20 instances each, max err " + ", ".join(f"{k}={v:.1g}" for k, v in worst.items()))


# --------------------------------------------------------------------------- 6. metric closed forms


def test_criterion_06_metric_closed_forms():
    rng = np.random.default_rng(606)
    gt = rng.uniform(10, 200, (3, 16, 16))
    p = M.psnr(gt + 1, gt, peak=255)
    gt_unit = rng.uniform(0.1, 1, (3, 16, 16))
    q = M.uiqi(gt_unit, 2 * gt_unit, window=None)
    j = M.colorjsd([0.5, 0.5], [1.0, 0.0])
    same = M.color_histogram(gt_unit)
    j_same = M.colorjsd(same, same)
    j_disjoint = M.colorjsd(M.color_histogram(np.full((3, 4, 4), 0.1)), M.color_histogram(np.full((3, 4, 4), 0.9)))
    ok = abs(p - 48.13) <= 0.01 and abs(q - 0.64) <= 1e-3 and abs(j - 0.3113) <= 1e-3 and j_same == 0 and abs(j_disjoint - 1) <= 1e-6
    record(6, ok, f"psnr={p:.4f} uiqi={q:.5f} jsd={j:.5f} jsd(P,P)={j_same} jsd(disjoint)={j_disjoint:.8f}")


# --------------------------------------------------------------------------- 7. toy training


def test_criterion_07_toy_training(toy_data):
    train, test = toy_data
    t0 = time.perf_counter()
    res = train_on_pairs(TOY.override(iters=TOY_ITERS), train)
    elapsed = time.perf_counter() - t0
    pix = res.trace("pix")
    first, last = pix[:20].mean(), pix[-20:].mean()
    untrained, _ = build_models(TOY)
    psnr_trained, psnr_untrained = held_out_psnr(res.generator, test), held_out_psnr(untrained, test)
    ok = last <= 0.5 * first and psnr_trained > psnr_untrained and elapsed < 1800
    record(7, ok, f"pixel L1 trailing mean {first:.4f} -> {last:.4f} ({100 * last / first:.0f}%), "
                  f"held-out PSNR {psnr_untrained:.2f} -> {psnr_trained:.2f} dB, {elapsed:.0f}s for {TOY_ITERS} iterations")


# --------------------------------------------------------------------------- 8. stage cascade


def test_criterion_08_stage_cascade(toy_data):
    train, test = toy_data
    psnr = {}
    for stages in (1, 2):
        res = train_on_pairs(TOY.override(stages=stages, iters=STAGE_ITERS), train)
        psnr[stages] = held_out_psnr(res.generator, test)
    counts = [MTSIC(TOY.override(stages=n).generator(), 0).num_parameters() for n in (1, 2, 3, 4, 5)]
    steps = set(np.diff(counts).tolist())
    single = STformer(32, np.random.default_rng(0), GeneratorConfig()).num_parameters() + 1
    affine = steps == {single}
    ok = psnr[2] >= psnr[1] and affine
    record(8, ok, f"held-out PSNR Ns=1 {psnr[1]:.2f} dB, Ns=2 {psnr[2]:.2f} dB after {STAGE_ITERS} iterations; "
                  f"params {counts} grow by {sorted(steps)} per stage (one STformer + skip gain = {single})")


# --------------------------------------------------------------------------- 9. loss weights


def test_criterion_09_loss_weights():
    expected = {"cgan": 1.0, "pix": 50.0, "sam": 0.1, "fft": 1.0, "edge": 0.5, "per": 1.0, "tv": 1.0, "ssim": 1.0}
    defaults = O.LossWeights().as_dict() == expected
    rng = np.random.default_rng(909)
    worst = 0.0
    with precision(np.float64):
        for _ in range(200):
            values = {k: rng.uniform(0, 100) for k in O.LOSS_TERMS}
            total = O.total_loss({k: Tensor(np.float64(v)) for k, v in values.items()}).total.item()
            worst = max(worst, abs(total - sum(expected[k] * v for k, v in values.items())))
            name, delta = str(rng.choice(O.LOSS_TERMS)), rng.uniform(0, 10)
            bumped = dict(values, **{name: values[name] + delta})
            after = O.total_loss({k: Tensor(np.float64(v)) for k, v in bumped.items()}).total.item()
            worst = max(worst, abs(after - total - expected[name] * delta))
    record(9, defaults and worst <= 1e-6, f"defaults match: {defaults}; max linearity err {worst:.2g} over 200 draws")


# --------------------------------------------------------------------------- 10. determinism


def test_criterion_10_determinism(toy_data, tmp_path):
    train, _ = toy_data
    cfg = TOY.override(precision="float64", iters=3)
    a, b = train_on_pairs(cfg, train), train_on_pairs(cfg, train)
    same_traces = a.history == b.history
    same_weights = all(np.array_equal(p.data, q.data) for p, q in zip(a.generator.parameters(), b.generator.parameters()))
    rng = np.random.default_rng(1010)
    cube = rng.integers(0, 2**32, (8, 9, 7), dtype=np.uint64).astype(np.uint32).view(np.float32)
    write_cube(tmp_path / "c.sicb", cube)
    bit_exact = np.array_equal(read_cube(tmp_path / "c.sicb").view(np.uint32), cube.view(np.uint32))
    ok = same_traces and same_weights and bit_exact
    record(10, ok, f"float64 traces identical over {len(a.history)} iterations: {same_traces}; "
                   f"weights identical: {same_weights}; cube IO bit-exact: {bit_exact}")
