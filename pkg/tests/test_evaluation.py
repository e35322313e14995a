import csv

import numpy as np
import pytest

from drsan.data import dihedral, synthetic_images
from drsan.evaluation import (PSNR_CAP, EmptyDatasetError, EvalReport, evaluate, gaussian_window, psnr,
                              score_pairs, ssim)
from drsan.imaging import bicubic_resize, save_image


def ssim_oracle(a, b):
    """Direct sliding-window SSIM: weighted moments per 11x11 window, no filtering tricks."""
    x = np.arange(11) - 5.0
    g1 = np.exp(-x ** 2 / (2 * 1.5 ** 2))
    win = np.outer(g1, g1)
    win /= win.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = a.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (win * pa).sum(), (win * pb).sum()
            va = (win * (pa - ma) ** 2).sum()
            vb = (win * (pb - mb) ** 2).sum()
            cov = (win * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def psnr_oracle(a, b):
    mse = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    return 10 * np.log10(1 / mse)


def test_psnr_examples():
    a = np.full((2, 2), 0.3)
    assert psnr(a, a) == PSNR_CAP == 99.0
    assert psnr(np.zeros((3, 3)), np.ones((3, 3))) == 0.0
    assert abs(psnr(np.zeros((2, 2)), np.full((2, 2), 0.1)) - 20.0) < 1e-12


def test_psnr_crop_and_shapes(rng):
    a, b = rng.random((2, 10, 10))
    assert psnr(a, b, crop=2) == pytest.approx(psnr_oracle(a[2:-2, 2:-2], b[2:-2, 2:-2]), abs=1e-12)
    assert psnr(a[:, :, None], b[:, :, None]) == psnr(a, b)
    with pytest.raises(ValueError):
        psnr(a, b[:9])
    with pytest.raises(ValueError):
        psnr(a, b, crop=5)
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))


def test_ssim_examples(rng):
    a = rng.random((16, 16))
    assert ssim(a, a) == 1.0
    ca, cb = 0.2, 0.7
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    expect = (2 * ca * cb + c1) * c2 / ((ca ** 2 + cb ** 2 + c1) * c2)
    assert abs(ssim(np.full((12, 12), ca), np.full((12, 12), cb)) - expect) < 1e-12
    with pytest.raises(ValueError):
        ssim(rng.random((10, 20)), rng.random((10, 20)))
    with pytest.raises(ValueError):
        ssim(rng.random((14, 14)), rng.random((14, 14)), crop=2)


def test_metrics_match_oracles_on_random_pairs():
    rng = np.random.default_rng(20)
    for _ in range(20):
        a = rng.random((32, 32))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.3), a.shape), 0, 1)
        assert abs(psnr(a, b) - psnr_oracle(a, b)) < 1e-8
        assert abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-8


def test_gaussian_window():
    g = gaussian_window()
    assert g.size == 11 and abs(g.sum() - 1) < 1e-15 and g[5] == g.max()
    np.testing.assert_allclose(g, g[::-1])


def test_symmetry_and_dihedral_invariance(rng):
    a = rng.random((20, 24))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert psnr(a, b) == psnr(b, a)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-15
    for d in range(8):
        ta, tb = dihedral(a[:, :, None], d), dihedral(b[:, :, None], d)
        assert abs(psnr(ta, tb) - psnr(a, b)) < 1e-10
        assert abs(ssim(ta, tb) - ssim(a, b)) < 1e-10


def test_noise_monotonicity_and_range(rng):
    a = rng.random((24, 24))
    noise = rng.standard_normal(a.shape)
    ps = [psnr(a, a + amp * noise) for amp in (0.01, 0.05, 0.2)]
    assert ps[0] > ps[1] > ps[2]
    for amp in (0.01, 0.5, 5.0):
        assert -1 <= ssim(a, a + amp * noise) < 1
    assert -1 <= ssim(a, 1 - a) <= 1


def _write_set(directory, n=3, size=32):
    directory.mkdir(exist_ok=True)
    imgs = synthetic_images(n, size, seed=11)
    for i, im in enumerate(imgs):
        # add a soft gradient so bicubic is informative but not exact
        ramp = np.linspace(0.1, 0.6, size)[None, :, None]
        save_image(0.6 * im + 0.4 * ramp, directory / f"img{n - i}.png")
    return directory


def test_evaluate_ordering(tmp_path):
    d = _write_set(tmp_path / "set")
    bicubic = evaluate(lambda lr: bicubic_resize(lr, lr.shape[0] * 2, lr.shape[1] * 2), d, 2, model_id="bicubic")
    zero = evaluate(lambda lr: np.zeros((lr.shape[0] * 2, lr.shape[1] * 2, 3)), d, 2)
    assert [r[0] for r in bicubic.rows] == ["img1.png", "img2.png", "img3.png"]
    assert bicubic.crop == 2
    assert PSNR_CAP > bicubic.mean_psnr > zero.mean_psnr
    assert 1.0 > bicubic.mean_ssim > zero.mean_ssim


def test_identity_scores(rng):
    hr = [rng.random((20, 20, 3)) for _ in range(3)]
    rep = score_pairs([(f"{i}", h, h) for i, h in enumerate(hr)], scale=2)
    assert rep.mean_psnr == 99.0 and rep.mean_ssim == 1.0


def test_report_means_and_csv(tmp_path, rng):
    rep = EvalReport(rows=[("a", 30.0, 0.9), ("b", 31.5, 0.8), ("c", 29.25, 0.95)], scale=3, crop=3, model_id="m")
    assert abs(rep.mean_psnr - sum(r[1] for r in rep.rows) / 3) < 1e-9
    assert abs(rep.mean_ssim - sum(r[2] for r in rep.rows) / 3) < 1e-9
    rep.write_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["name", "psnr", "ssim"] and rows[-1][0] == "mean" and len(rows) == 5
    assert "psnr=30.2500" in rep.summary()


def test_evaluate_empty_dir(tmp_path):
    with pytest.raises(EmptyDatasetError):
        evaluate(lambda lr: lr, tmp_path, 2)
