import numpy as np
import pytest

from epdkit import distortions as D
from epdkit import metrics as M


def make_corpus(n=10, size=128, seed=9):
    """Synthetic photos: smooth gradients + colored shapes + texture."""
    rng = np.random.default_rng(seed)
    imgs = []
    for _ in range(n):
        yy, xx = np.mgrid[0:size, 0:size] / size
        base = np.stack([
            0.3 + 0.4 * yy,
            0.3 + 0.4 * xx,
            0.5 + 0.2 * np.sin(6 * np.pi * (yy + xx)),
        ], axis=-1)
        for _ in range(6):
            y, x = rng.integers(8, size - 24, 2)
            s = int(rng.integers(8, 24))
            base[y : y + s, x : x + s] = rng.random(3)
        base += rng.normal(0, 0.01, base.shape)
        imgs.append(np.clip(base, 0, 1))
    return imgs


CORPUS = make_corpus()
PHOTO = CORPUS[0]


# ---------------------------------------------------------------------------
# catalog


def test_catalog_has_25_kinds():
    assert len(D.list_kinds()) == 25


def test_catalog_has_7_categories():
    assert {k.category for k in D.list_kinds()} == set(D.CATEGORIES)


def test_category_sizes_match_taxonomy():
    sizes = {cat: len(D.kinds_in_category(cat)) for cat in D.CATEGORIES}
    assert sizes == {"D.1": 3, "D.2": 5, "D.3": 2, "D.4": 5, "D.5": 3, "D.6": 5, "D.7": 2}


def test_noise_category_members():
    assert set(D.kinds_in_category("D.4")) == {
        "white_noise", "color_noise", "impulse_noise", "multiplicative_noise",
        "gaussian_denoise",
    }


def test_compression_category_members():
    assert set(D.kinds_in_category("D.3")) == {"jpeg2000", "jpeg"}


def test_catalog_order_is_stable():
    assert [k.kind for k in D.list_kinds()] == [k.kind for k in D.list_kinds()]


# ---------------------------------------------------------------------------
# level params


def test_white_noise_level1_sigma():
    assert D.level_params("white_noise", 1)["sigma"] == 0.02


def test_pixelate_level5_block():
    assert D.level_params("pixelate", 5)["block"] == 16


def test_level_params_pure_lookup():
    assert D.level_params("jpeg", 3) == D.level_params("jpeg", 3)


def test_level_params_out_of_range():
    with pytest.raises(D.DistortionError):
        D.level_params("jpeg", 6)
    with pytest.raises(D.DistortionError):
        D.level_params("nope", 1)


def test_monotone_families_have_monotone_params():
    for kind in D.MONOTONE_FAMILIES:
        info = next(k for k in D.list_kinds() if k.kind == kind)
        key = next(iter(info.levels[0]))
        vals = [lvl[key] for lvl in info.levels]
        diffs = np.diff(vals)
        assert (diffs > 0).all() or (diffs < 0).all(), kind


# ---------------------------------------------------------------------------
# apply_distortion contracts


def test_unknown_kind_rejected():
    with pytest.raises(D.DistortionError):
        D.DistortionSpec("sparkle", 1, 0)


def test_too_small_image_rejected():
    small = np.full((8, 8, 3), 0.5)
    with pytest.raises(D.DistortionError):
        D.apply_distortion(small, D.DistortionSpec("pixelate", 5, 0))


def test_darken_fixes_white():
    img = np.ones((32, 32, 3))
    out = D.apply_distortion(img, D.DistortionSpec("darken", 5, 0))
    np.testing.assert_allclose(out, 1.0)


def test_mean_shift_clamps():
    img = np.full((32, 32, 3), 0.9)
    out = D.apply_distortion(img, D.DistortionSpec("mean_shift", 4, 0))
    np.testing.assert_allclose(out, 1.0)
    assert D.level_params("mean_shift", 4)["offset"] == 0.2


def test_white_noise_severity_vs_psnr():
    lo = D.apply_distortion(PHOTO, D.DistortionSpec("white_noise", 1, 7))
    hi = D.apply_distortion(PHOTO, D.DistortionSpec("white_noise", 5, 7))
    assert M.psnr(PHOTO, lo) > M.psnr(PHOTO, hi)


@pytest.mark.parametrize("kind", [k.kind for k in D.list_kinds()])
@pytest.mark.parametrize("level", [1, 5])
def test_all_kinds_deterministic_range_safe_shape_preserving(kind, level):
    spec = D.DistortionSpec(kind, level, seed=12345)
    a = D.apply_distortion(PHOTO, spec)
    b = D.apply_distortion(PHOTO, spec)
    assert (a == b).all(), "not bit-identical"
    assert a.shape == PHOTO.shape
    assert np.isfinite(a).all()
    assert a.min() >= 0.0 and a.max() <= 1.0


@pytest.mark.parametrize("kind", D.MONOTONE_FAMILIES)
def test_mean_psnr_non_increasing_over_levels(kind):
    means = []
    for level in range(1, 6):
        vals = [
            M.psnr(img, D.apply_distortion(img, D.DistortionSpec(kind, level, seed=3)))
            for img in CORPUS
        ]
        means.append(np.mean(vals))
    assert all(a >= b for a, b in zip(means, means[1:])), f"{kind}: {means}"


# ---------------------------------------------------------------------------
# batches


def test_batch_deterministic_kind_identical_outputs():
    imgs = [PHOTO] * 3
    outs = D.distort_batch(imgs, D.DistortionSpec("gaussian_blur", 2, 5))
    assert (outs[0] == outs[1]).all() and (outs[1] == outs[2]).all()


def test_batch_stochastic_kind_differs_per_frame():
    imgs = [PHOTO] * 3
    outs = D.distort_batch(imgs, D.DistortionSpec("white_noise", 3, 5))
    assert not (outs[0] == outs[1]).all()
    assert not (outs[1] == outs[2]).all()


def test_batch_rerun_bit_identical():
    imgs = CORPUS[:3]
    spec = D.DistortionSpec("impulse_noise", 4, 99)
    a = D.distort_batch(imgs, spec)
    b = D.distort_batch(imgs, spec)
    for x, y in zip(a, b):
        assert (x == y).all()


def test_batch_empty_rejected():
    with pytest.raises(D.DistortionError):
        D.distort_batch([], D.DistortionSpec("jpeg", 1, 0))


# ---------------------------------------------------------------------------
# colour conversion vectors


def test_lab_white_point():
    lab = D.rgb_to_lab(np.ones((1, 1, 3)))
    np.testing.assert_allclose(lab[0, 0], [100.0, 0.0, 0.0], atol=1e-3)


def test_lab_round_trip():
    rng = np.random.default_rng(4)
    img = rng.random((16, 16, 3))
    back = D.lab_to_rgb(D.rgb_to_lab(img))
    np.testing.assert_allclose(back, img, atol=1e-6)


def test_hsv_round_trip():
    rng = np.random.default_rng(8)
    img = rng.random((16, 16, 3))
    h, s, v = D._rgb_to_hsv(img)
    np.testing.assert_allclose(D._hsv_to_rgb(h, s, v), img, atol=1e-9)
