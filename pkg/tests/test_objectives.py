import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import TOL32, TOL64, separated
from oracles import conv2d_loops, ssim_direct, sobel_magnitude_loops
from mtsic import objectives as O
from mtsic.discriminator import DiscConfig, Discriminator
from mtsic.gradcheck import grad_check
from mtsic.tensor import ShapeError, Tape, Tensor, parameter, precision


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


# --------------------------------------------------------------------------- adversarial


def test_cgan_at_zero_logits():
    z = t64(np.zeros((3, 3)))
    loss_d, loss_g = O.cgan_losses(z, z)
    assert loss_d.item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert loss_g.item() == pytest.approx(math.log(2), abs=1e-12)
    assert O.disc_loss(z, z).item() == loss_d.item()
    assert O.gen_adv_loss(z).item() == loss_g.item()


def test_cgan_perfect_discriminator_limit():
    loss_d, _ = O.cgan_losses(t64(np.full((2, 3), 200.0)), t64(np.full((2, 3), -200.0)))
    assert 0 <= loss_d.item() < 1e-80


def test_cgan_shape_mismatch():
    with pytest.raises(ShapeError):
        O.cgan_losses(t64(np.zeros((2, 3))), t64(np.zeros((3, 3))))


def test_generator_adversarial_gradient(rng):
    s = rng.standard_normal((3, 3))
    leaf = parameter(s, dtype=np.float64)
    with Tape() as tape:
        loss = O.gen_adv_loss(leaf)
    tape.backward(loss)
    np.testing.assert_allclose(leaf.grad, (1 / (1 + np.exp(-s)) - 1) / s.size, atol=1e-14)
    assert grad_check(O.gen_adv_loss, t64(s)) < TOL64
    assert grad_check(lambda t: O.disc_loss(t, t64(s[::-1].copy())), t64(s)) < TOL64


# --------------------------------------------------------------------------- reconstruction terms


def test_pixel_l1_values(rng):
    a, b = rng.standard_normal((3, 4, 5)), rng.standard_normal((3, 4, 5))
    assert O.pixel_l1(t64(a), t64(a)).item() == 0
    assert O.pixel_l1(t64(np.zeros((3, 2, 2))), t64(np.ones((3, 2, 2)))).item() == 1
    direct = sum(abs(x - y) for x, y in zip(a.ravel().tolist(), b.ravel().tolist())) / a.size
    assert O.pixel_l1(t64(a), t64(b)).item() == pytest.approx(direct, abs=1e-7)


def test_sam_values():
    def img(v):
        return t64(np.broadcast_to(np.array(v, float)[:, None, None], (3, 2, 2)).copy())

    assert O.sam_loss(img([0.3, 0.2, 0.9]), img([0.3, 0.2, 0.9])).item() == pytest.approx(0, abs=1e-6)
    assert O.sam_loss(img([1, 0, 0]), img([0, 1, 0])).item() == pytest.approx(math.pi / 2)
    assert O.sam_loss(img([1, 0, 0]), img([1, 1, 0])).item() == pytest.approx(math.pi / 4)
    assert math.isfinite(O.sam_loss(img([0, 0, 0]), img([1, 0, 0])).item())


def test_fft_values(rng):
    a = rng.standard_normal((3, 4, 6))
    assert O.fft_loss(t64(a), t64(a)).item() == 0
    assert O.fft_loss(t64(np.full((3, 4, 6), 0.7)), t64(np.full((3, 4, 6), -0.2))).item() == pytest.approx(0.9)
    gt = rng.standard_normal((3, 4, 6))
    d = rng.standard_normal((3, 4, 6))
    assert O.fft_loss(t64(gt + 2 * d), t64(gt)).item() == pytest.approx(2 * O.fft_loss(t64(gt + d), t64(gt)).item())


def test_edge_values(rng):
    a = rng.standard_normal((3, 6, 6))
    assert O.edge_loss(t64(a), t64(a)).item() == 0
    assert O.edge_loss(t64(np.full((3, 6, 6), 0.2)), t64(np.full((3, 6, 6), 0.9))).item() == pytest.approx(0, abs=1e-12)
    step = np.zeros((3, 7, 7))
    step[:, :, 4:] = 1.0
    flat = np.zeros_like(step)
    expected = np.abs(sobel_magnitude_loops(step) - math.sqrt(1e-6)).mean()
    assert O.edge_loss(t64(step), t64(flat)).item() == pytest.approx(expected, abs=1e-12)
    np.testing.assert_allclose(O.sobel_magnitude(t64(a)).data, sobel_magnitude_loops(a), atol=1e-12)


def test_tv_values(rng):
    assert O.tv_loss(t64(np.full((3, 4, 4), 5.0))).item() == 0
    ramp = np.broadcast_to(np.arange(6) * -0.4, (3, 5, 6)).copy()
    assert O.tv_loss(t64(ramp)).item() == pytest.approx(0.4)
    x = rng.standard_normal((3, 5, 6))
    for alpha in (-2.5, 0.0, 3.0):
        assert O.tv_loss(t64(alpha * x)).item() == pytest.approx(abs(alpha) * O.tv_loss(t64(x)).item())


@pytest.mark.parametrize("instance", range(20))
def test_ssim_matches_direct_oracle(instance):
    r = np.random.default_rng(1200 + instance)
    a = r.uniform(-1, 1, (2, 12, 13))
    b = np.clip(a + r.normal(0, 0.4, a.shape), -1, 1) if instance % 2 else r.uniform(-1, 1, a.shape)
    assert 1 - O.ssim_loss(t64(a), t64(b)).item() == pytest.approx(ssim_direct(a, b, 2.0), abs=1e-6)


def test_ssim_loss_properties(rng):
    a = rng.uniform(-1, 1, (3, 16, 16))
    b = rng.uniform(-1, 1, (3, 16, 16))
    assert O.ssim_loss(t64(a), t64(a)).item() == pytest.approx(0, abs=1e-12)
    assert O.ssim_loss(t64(a), t64(b)).item() == O.ssim_loss(t64(b), t64(a)).item()
    noise_vs_const = O.ssim_loss(t64(a), t64(np.zeros_like(a))).item()
    assert noise_vs_const == pytest.approx(1 - ssim_direct(a, np.zeros_like(a), 2.0), abs=1e-9)
    assert noise_vs_const > 0.9
    with pytest.raises(ShapeError):
        O.ssim_loss(t64(a[:, :8, :8]), t64(b[:, :8, :8]))


# --------------------------------------------------------------------------- perceptual


SMALL = DiscConfig(bands=4, scales=2, base_channels=4, max_channels=8, hidden=8)


def trunk_staged(d, image, cube):
    lrelu = lambda v: np.where(v > 0, v, 0.2 * v)

    def conv(layer, v):
        return conv2d_loops(v, layer.weight.data, layer.bias.data, layer.stride, layer.pad if isinstance(layer.pad, int) else layer.pad[0])

    x = np.concatenate([image, cube])
    x = lrelu(conv(d.init2, lrelu(conv(d.init1, x))))
    feats = []
    for s in d.scales:
        x = conv(s.adapt2, lrelu(conv(s.adapt1, lrelu(conv(s.down, x)))))
        feats.append(x)
    return feats


def test_perceptual_matches_staged_oracle(rng, f64):
    d = Discriminator(SMALL, rng)
    gen, gt, cube = rng.uniform(-1, 1, (3, 16, 16)), rng.uniform(-1, 1, (3, 16, 16)), rng.standard_normal((4, 16, 16))
    fa, fb = trunk_staged(d, gen, cube), trunk_staged(d, gt, cube)
    expected = np.mean([np.abs(a - b).mean() for a, b in zip(fa, fb)])
    assert O.perceptual_loss(t64(gen), t64(gt), t64(cube), d).item() == pytest.approx(expected, abs=1e-9)
    assert O.perceptual_loss(t64(gt), t64(gt), t64(cube), d).item() == 0


def test_perceptual_endpoints(rng, f64):
    d = Discriminator(SMALL, rng)
    gt, delta, cube = rng.uniform(-1, 1, (3, 16, 16)), rng.uniform(-1, 1, (3, 16, 16)), rng.standard_normal((4, 16, 16))
    at = lambda s: O.perceptual_loss(t64(gt + s * delta), t64(gt), t64(cube), d).item()
    assert at(0.0) <= at(1.0)


def test_perceptual_gradient_reaches_generator_only(rng, f64):
    d = Discriminator(SMALL, rng)
    gen = parameter(rng.uniform(-1, 1, (3, 16, 16)))
    gt, cube = t64(rng.uniform(-1, 1, (3, 16, 16))), t64(rng.standard_normal((4, 16, 16)))
    d.requires_grad_(False)
    try:
        with Tape() as tape:
            loss = O.perceptual_loss(gen, gt, cube, d)
        tape.backward(loss)
    finally:
        d.requires_grad_(True)
    assert gen.grad is not None and np.any(gen.grad)
    assert all(p.grad is None for p in d.parameters())


def test_feature_l1_length_mismatch():
    with pytest.raises(ShapeError):
        O.feature_l1([t64(np.zeros((1, 2, 2)))], [])


# --------------------------------------------------------------------------- invariants


def _losses_against(gt, cube, disc):
    return {
        "pix": lambda g: O.pixel_l1(g, gt),
        "sam": lambda g: O.sam_loss(g, gt),
        "fft": lambda g: O.fft_loss(g, gt),
        "edge": lambda g: O.edge_loss(g, gt),
        "tv": O.tv_loss,
        "ssim": lambda g: O.ssim_loss(g, gt),
        "per": lambda g: O.perceptual_loss(g, gt, cube, disc),
    }


def test_losses_non_negative_and_zero_at_target(rng, f64):
    disc = Discriminator(SMALL, rng)
    gt = t64(rng.uniform(-1, 1, (3, 16, 16)))
    cube = t64(rng.standard_normal((4, 16, 16)))
    gen = t64(rng.uniform(-1, 1, (3, 16, 16)))
    for name, f in _losses_against(gt, cube, disc).items():
        assert f(gen).item() >= 0, name
        if name != "tv":
            assert f(gt).item() == pytest.approx(0, abs=1e-6), name


@pytest.mark.parametrize("dtype,tol", [(np.float64, TOL64), (np.float32, TOL32)])
def test_loss_gradients(rng, dtype, tol):
    with precision(dtype):
        disc = Discriminator(SMALL, rng)
    gt_np = separated(rng, (3, 16, 16), -0.9, 0.9, gap=1e-3)
    gen_np = np.clip(gt_np + rng.choice([-1, 1], gt_np.shape) * rng.uniform(0.05, 0.3, gt_np.shape), -1, 1)
    gt = Tensor(gt_np.astype(dtype))
    cube = Tensor(rng.standard_normal((4, 16, 16)).astype(dtype))
    gen = Tensor(gen_np.astype(dtype))
    for name, f in _losses_against(gt, cube, disc).items():
        err = grad_check(f, gen, eps=1e-5, max_components=120)
        assert err < tol, f"{name}: {err}"


# --------------------------------------------------------------------------- weighting


def test_default_weights():
    assert O.LossWeights().as_dict() == {
        "cgan": 1.0, "pix": 50.0, "sam": 0.1, "fft": 1.0, "edge": 0.5, "per": 1.0, "tv": 1.0, "ssim": 1.0,
    }
    with pytest.raises(ValueError):
        O.LossWeights(pix=-1)


def test_total_loss_examples():
    assert O.total_loss({n: t64(0.0) for n in O.LOSS_TERMS}).total.item() == 0
    assert O.total_loss({"edge": t64(3.0)}).total.item() == pytest.approx(1.5)
    report = O.total_loss({n: t64(1.0) for n in O.LOSS_TERMS})
    assert report.total.item() == pytest.approx(55.6, abs=1e-12)
    assert report.values()["pix"] == 1.0
    with pytest.raises(KeyError):
        O.total_loss({"bogus": t64(1.0)})


def test_first_non_finite_names_term():
    report = O.total_loss({"pix": t64(1.0), "sam": t64(float("nan"))})
    assert report.first_non_finite() == "sam"


@given(
    st.dictionaries(st.sampled_from(O.LOSS_TERMS), st.floats(0, 100), min_size=len(O.LOSS_TERMS), max_size=len(O.LOSS_TERMS)),
    st.sampled_from(O.LOSS_TERMS),
    st.floats(0, 100),
)
def test_total_loss_linear_in_each_term(values, name, delta):
    w = O.LossWeights()
    base = O.total_loss({k: t64(v) for k, v in values.items()}, w).total.item()
    bumped = dict(values)
    bumped[name] += delta
    after = O.total_loss({k: t64(v) for k, v in bumped.items()}, w).total.item()
    expected_base = sum(w.as_dict()[k] * v for k, v in values.items())
    assert base == pytest.approx(expected_base, abs=1e-6)
    assert after - base == pytest.approx(w.as_dict()[name] * delta, abs=1e-6)
