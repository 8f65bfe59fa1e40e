import numpy as np
import pytest
from scipy import ndimage

from pxiq import metrics
from pxiq.metrics import (
    MetricError,
    PSNR_CAP,
    get_oracle,
    luma,
    make_external_oracle,
    ms_ssim,
    psnr,
    psnr_avg,
    ssim,
)


def synth_image(seed, size=192):
    """Deterministic natural-looking texture in [0, 255]."""
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(size, size))
    smooth = ndimage.gaussian_filter(base, sigma=4.0)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.5 * (smooth - smooth.min()) / (np.ptp(smooth) + 1e-9) + 0.3 * yy + 0.2 * np.sin(7 * xx)
    img = (img - img.min()) / (np.ptp(img) + 1e-9)
    return img * 255.0


# -- luma --------------------------------------------------------------

def test_luma_white_is_255():
    img = np.full((4, 4, 3), 255.0)
    np.testing.assert_allclose(luma(img), 255.0)


def test_luma_pure_red():
    img = np.zeros((2, 2, 3))
    img[..., 0] = 255.0
    np.testing.assert_allclose(luma(img), 76.245)


def test_luma_grayscale_identity():
    plane = np.arange(16.0).reshape(4, 4)
    img = np.stack([plane] * 3, axis=-1)
    np.testing.assert_allclose(luma(img), plane)


def test_luma_wrong_channels():
    with pytest.raises(MetricError):
        luma(np.zeros((4, 4, 4)))


# -- psnr --------------------------------------------------------------

def test_psnr_identical_hits_cap():
    img = synth_image(0)
    assert psnr(img, img).value == PSNR_CAP


def test_psnr_uniform_error_closed_form():
    ref = np.full((8, 8), 100.0)
    dist = ref + 16.0
    want = 10.0 * np.log10(255.0 ** 2 / 256.0)
    assert abs(psnr(ref, dist).value - want) < 1e-12
    assert abs(want - 24.0484) < 1e-4


def test_psnr_doubling_error_drops_6db():
    ref = np.zeros((8, 8))
    e = np.random.default_rng(1).normal(size=(8, 8))
    drop = psnr(ref, e).value - psnr(ref, 2 * e).value
    assert abs(drop - 20.0 * np.log10(2.0)) < 1e-9


def test_psnr_monotone_in_mse():
    ref = np.zeros((8, 8))
    e = np.random.default_rng(2).normal(size=(8, 8))
    values = [psnr(ref, s * e).value for s in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_shape_mismatch():
    with pytest.raises(MetricError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


# -- psnr_avg ----------------------------------------------------------

def test_psnr_avg_closed_form():
    assert abs(psnr_avg(40, 30, 30) - 36.666666666666664) < 1e-12


def test_psnr_avg_symmetry():
    for p in (0.0, 17.3, 99.0):
        assert psnr_avg(p, p, p) == pytest.approx(p, abs=1e-12)


def test_psnr_avg_matches_brute_force(rng):
    for _ in range(50):
        y, u, v = rng.uniform(0, 100, size=3)
        want = sum([y] * 4 + [u, v]) / 6.0
        assert abs(psnr_avg(y, u, v) - want) < 1e-12


# -- ssim --------------------------------------------------------------

def test_ssim_identity():
    img = synth_image(3)
    assert ssim(img, img).value == pytest.approx(1.0, abs=1e-9)


def test_ssim_constant_images_closed_form():
    ref = np.full((32, 32), 100.0)
    dist = np.full((32, 32), 110.0)
    c1 = (0.01 * 255.0) ** 2
    want = (2 * 100 * 110 + c1) / (100 ** 2 + 110 ** 2 + c1)
    assert ssim(ref, dist).value == pytest.approx(want, abs=1e-6)


def test_ssim_monotone_noise_degradation():
    img = synth_image(4)
    rng = np.random.default_rng(5)
    noise = rng.normal(size=img.shape)
    values = [ssim(img, np.clip(img + s * noise, 0, 255)).value for s in (2, 5, 10, 20, 40)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_ssim_symmetry_and_range():
    a = synth_image(6)
    b = np.clip(a + np.random.default_rng(7).normal(scale=15, size=a.shape), 0, 255)
    s_ab = ssim(a, b).value
    s_ba = ssim(b, a).value
    assert s_ab == pytest.approx(s_ba, abs=1e-12)
    assert -1.0 <= s_ab <= 1.0


def test_ssim_rejects_small_images():
    with pytest.raises(MetricError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# -- ms_ssim -----------------------------------------------------------

def test_ms_ssim_identity():
    img = synth_image(8, size=200)
    assert ms_ssim(img, img).value == pytest.approx(1.0, abs=1e-9)


def test_ms_ssim_constant_shift_luminance_only():
    ref = np.full((192, 192), 100.0)
    dist = np.full((192, 192), 110.0)
    c1 = (0.01 * 255.0) ** 2
    lum = (2 * 100 * 110 + c1) / (100 ** 2 + 110 ** 2 + c1)
    want = lum ** metrics.MS_SSIM_WEIGHTS[-1]
    assert ms_ssim(ref, dist).value == pytest.approx(want, abs=1e-6)


def test_ms_ssim_rejects_small_images():
    with pytest.raises(MetricError):
        ms_ssim(np.zeros((128, 128)), np.zeros((128, 128)))


def test_ms_ssim_symmetry():
    a = synth_image(9, size=200)
    b = np.clip(a + np.random.default_rng(10).normal(scale=10, size=a.shape), 0, 255)
    assert ms_ssim(a, b).value == pytest.approx(ms_ssim(b, a).value, abs=1e-12)


def _msssim_oracle(ref, dist):
    """Independent per-scale recomputation using ndimage filtering."""
    win = metrics.gaussian_window()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2

    def stats(a, b):
        f = lambda im: ndimage.correlate(im, win, mode="constant")
        k = win.shape[0] // 2
        crop = lambda im: im[k:-k, k:-k]
        mu1, mu2 = crop(f(a)), crop(f(b))
        s1 = crop(f(a * a)) - mu1 ** 2
        s2 = crop(f(b * b)) - mu2 ** 2
        s12 = crop(f(a * b)) - mu1 * mu2
        lum = (2 * mu1 * mu2 + c1) / (mu1 ** 2 + mu2 ** 2 + c1)
        cs = (2 * s12 + c2) / (s1 + s2 + c2)
        return lum, cs

    a, b = ref.astype(np.float64), dist.astype(np.float64)
    total = 1.0
    for lvl, wgt in enumerate(metrics.MS_SSIM_WEIGHTS):
        lum, cs = stats(a, b)
        total *= max(cs.mean(), 0.0) ** wgt
        if lvl == 4:
            total *= max(lum.mean(), 0.0) ** wgt
        else:
            h, w = a.shape
            a = a[:h - h % 2, :w - w % 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
            b = b[:h - h % 2, :w - w % 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return total


def test_ms_ssim_matches_per_scale_oracle():
    ref = synth_image(11, size=192)
    dist = np.clip(ref + np.random.default_rng(12).normal(scale=12, size=ref.shape), 0, 255)
    got = ms_ssim(ref, dist).value
    want = _msssim_oracle(ref, dist)
    assert got == pytest.approx(want, rel=1e-10)


def test_ms_ssim_blur_below_identity():
    ref = synth_image(13, size=192)
    blurred = ndimage.gaussian_filter(ref, sigma=2.0)
    assert ms_ssim(ref, blurred).value < ssim(ref, ref).value


# -- oracle registry ----------------------------------------------------

def test_registered_oracles_hit_max_on_identical_images(rng):
    for name, oracle in metrics.oracle_registry.items():
        for seed in range(3):
            plane = synth_image(seed + 20, size=192)
            img = np.stack([plane, plane * 0.9, plane * 0.8], axis=-1)
            assert oracle.score(img, img) == pytest.approx(oracle.max_score, abs=1e-9), name


def test_oracle_scores_are_deterministic():
    plane = synth_image(30, size=192)
    img = np.stack([plane] * 3, axis=-1)
    dist = np.clip(img + np.random.default_rng(31).normal(scale=8, size=img.shape), 0, 255)
    oracle = get_oracle("msssim")
    assert oracle.score(img, dist) == oracle.score(img, dist)


def test_get_oracle_unknown():
    with pytest.raises(MetricError):
        get_oracle("vmaf-not-registered")


def test_external_oracle_bridge(tmp_path):
    script = tmp_path / "scorer.py"
    script.write_text(
        "import sys\n"
        "print('quality-score:', 42.5)\n")
    oracle = make_external_oracle("stub", ["python3", str(script)], max_score=100.0)
    img = np.stack([synth_image(40, size=32)] * 3, axis=-1)
    assert oracle.score(img, img) == 42.5
    assert oracle.max_score == 100.0


def test_external_oracle_failure(tmp_path):
    script = tmp_path / "broken.py"
    script.write_text("import sys; sys.exit(3)\n")
    oracle = make_external_oracle("broken", ["python3", str(script)])
    img = np.stack([synth_image(41, size=32)] * 3, axis=-1)
    with pytest.raises(MetricError):
        oracle.score(img, img)


def test_external_oracle_no_number(tmp_path):
    script = tmp_path / "mute.py"
    script.write_text("print('no numbers here')\n")
    oracle = make_external_oracle("mute", ["python3", str(script)])
    img = np.stack([synth_image(42, size=32)] * 3, axis=-1)
    with pytest.raises(MetricError):
        oracle.score(img, img)
