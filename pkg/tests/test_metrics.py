import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epdkit import metrics as M

RNG = np.random.default_rng(77)


# ---------------------------------------------------------------------------
# brute-force definitional oracles


def rank_average(v):
    """Average ranks (1-based) computed by sorting and tie-group averaging."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def pearson_oracle(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = x - x.mean(), y - y.mean()
    return float((xm * ym).sum() / math.sqrt((xm * xm).sum() * (ym * ym).sum()))


def srcc_oracle(x, y):
    return pearson_oracle(rank_average(x), rank_average(y))


def krcc_oracle(x, y):
    """Tau-b by explicit pair enumeration."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    conc = disc = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx, dy = x[i] - x[j], y[i] - y[j]
            if dx == 0 and dy == 0:
                tx += 1
                ty += 1
            elif dx == 0:
                tx += 1
            elif dy == 0:
                ty += 1
            elif dx * dy > 0:
                conc += 1
            else:
                disc += 1
    n0 = n * (n - 1) / 2
    return (conc - disc) / math.sqrt((n0 - tx) * (n0 - ty))


# ---------------------------------------------------------------------------
# psnr / ssim


def test_psnr_identical_is_inf():
    img = RNG.random((16, 16, 3))
    assert M.psnr(img, img.copy()) == math.inf


def test_psnr_uniform_tenth():
    ref = np.full((16, 16, 3), 0.5)
    assert M.psnr(ref, ref + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_uniform_half():
    ref = np.zeros((16, 16, 3))
    assert M.psnr(ref, ref + 0.5) == pytest.approx(20 * math.log10(2), abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(M.MetricError):
        M.psnr(np.zeros((8, 8, 3)), np.zeros((9, 8, 3)))


def test_ssim_identical():
    img = RNG.random((32, 32, 3))
    assert M.ssim(img, img.copy()) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_pair_analytic():
    a = np.full((32, 32, 3), 0.5)
    b = np.full((32, 32, 3), 0.25)
    expect = (2 * 0.5 * 0.25 + 1e-4) / (0.5**2 + 0.25**2 + 1e-4)
    assert M.ssim(a, b) == pytest.approx(expect, abs=1e-9)


def test_ssim_too_small():
    with pytest.raises(M.MetricError):
        M.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_psnr_decreases_with_noise_variance():
    ref = RNG.random((32, 32, 3)) * 0.5 + 0.25
    noise_rng = np.random.default_rng(3)
    vals = []
    for sigma in (0.02, 0.05, 0.09, 0.14, 0.20):
        dist = np.clip(ref + noise_rng.normal(0, sigma, ref.shape), 0, 1)
        vals.append(M.psnr(ref, dist))
    assert all(a > b for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# correlation coefficients


def test_srcc_spec_example():
    assert M.srcc([1, 2, 3], [3, 1, 2]) == pytest.approx(-0.5, abs=1e-12)


def test_srcc_monotone_invariance():
    x = RNG.random(30)
    assert M.srcc(x, np.exp(3 * x)) == pytest.approx(1.0, abs=1e-12)


def test_srcc_reversal():
    x = np.arange(10.0)
    assert M.srcc(x, x[::-1]) == pytest.approx(-1.0, abs=1e-12)


def test_krcc_spec_example():
    assert M.krcc([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3, abs=1e-12)


def test_krcc_identity_and_reversal():
    assert M.krcc([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0, abs=1e-12)
    assert M.krcc([1, 2], [2, 1]) == pytest.approx(-1.0, abs=1e-12)


def test_plcc_affine_invariance():
    x = RNG.random(20)
    assert M.plcc(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-12)
    assert M.plcc(x, -x) == pytest.approx(-1.0, abs=1e-12)


def test_plcc_spec_example():
    expect = pearson_oracle([1, 2, 3], [1, 2, 4])
    assert M.plcc([1, 2, 3], [1, 2, 4]) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(0.9820, abs=5e-5)


def test_constant_vector_rejected():
    with pytest.raises(M.UndefinedCorrelationError):
        M.srcc([1, 1, 1], [1, 2, 3])
    with pytest.raises(M.UndefinedCorrelationError):
        M.krcc([1, 2, 3], [2, 2, 2])
    with pytest.raises(M.UndefinedCorrelationError):
        M.plcc([5, 5], [1, 2])


def test_plcc_poly3_perfect_cubic():
    x = np.linspace(-1, 2, 25)
    y = 0.3 * x**3 - x + 0.5
    assert M.plcc(x, y, mapping="poly3") == pytest.approx(1.0, abs=1e-9)


def test_plcc_logistic4_recovers_sigmoid():
    x = np.linspace(-4, 4, 50)
    y = 3.0 / (1 + np.exp(-(x - 0.5) / 0.8)) + 1.0
    r, _, fallback = M.plcc_report(x, y, mapping="logistic4")
    assert not fallback
    assert r == pytest.approx(1.0, abs=1e-6)


def test_plcc_mapping_fallback_flag():
    # 4 collinear-in-y points with duplicate x make the cubic fit degenerate
    x = np.array([1.0, 1.0, 1.0, 2.0])
    y = np.array([1.0, 2.0, 3.0, 4.0])
    r, _, fallback = M.plcc_report(x, y, mapping="poly3")
    assert np.isfinite(r)


@settings(deadline=None, max_examples=150)
@given(
    st.integers(min_value=5, max_value=50),
    st.integers(min_value=0, max_value=2**31 - 1),
    st.booleans(),
)
def test_correlations_match_oracles(n, seed, with_ties):
    rng = np.random.default_rng(seed)
    if with_ties:
        x = rng.integers(0, max(2, n // 3), n).astype(float)
        y = rng.integers(0, max(2, n // 3), n).astype(float)
    else:
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
    if np.all(x == x[0]) or np.all(y == y[0]):
        return
    assert M.srcc(x, y) == pytest.approx(srcc_oracle(x, y), abs=1e-12)
    assert M.krcc(x, y) == pytest.approx(krcc_oracle(x, y), abs=1e-12)
    assert M.plcc(x, y) == pytest.approx(pearson_oracle(x, y), abs=1e-12)
    # symmetry
    assert M.srcc(y, x) == pytest.approx(M.srcc(x, y), abs=1e-12)
    assert M.krcc(y, x) == pytest.approx(M.krcc(x, y), abs=1e-12)
    assert M.plcc(y, x) == pytest.approx(M.plcc(x, y), abs=1e-12)


@settings(deadline=None, max_examples=30)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_rank_stats_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(20)
    y = rng.standard_normal(20)
    fx = np.exp(x)  # strictly monotone
    assert M.srcc(fx, y) == pytest.approx(M.srcc(x, y), abs=1e-12)
    assert M.krcc(fx, y) == pytest.approx(M.krcc(x, y), abs=1e-12)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_basic():
    np.testing.assert_allclose(M.normalize_scores([10, 20, 30]), [0, 2.5, 5])


def test_normalize_fixed_point():
    v = np.array([0.0, 1.0, 2.5, 5.0])
    np.testing.assert_allclose(M.normalize_scores(v), v)


def test_normalize_degenerate():
    with pytest.raises(M.MetricError):
        M.normalize_scores([2.0, 2.0])


@settings(deadline=None, max_examples=50)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_normalize_preserves_order(seed):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(25)
    if np.unique(raw).size < 2:
        return
    out = M.normalize_scores(raw)
    assert out.min() == pytest.approx(0.0, abs=1e-15)
    assert out.max() == pytest.approx(5.0, abs=1e-14)
    np.testing.assert_array_equal(np.argsort(raw), np.argsort(out))
    if np.unique(raw).size == raw.size:
        assert M.srcc(raw, out) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# group stats


def test_group_stats_constant_group():
    gs = M.group_stats([("blur", 1, 2.0), ("blur", 1, 2.0), ("blur", 1, 2.0)])
    mean, std, n = gs.cells[("blur", 1)]
    assert (mean, std, n) == (2.0, 0.0, 3)


def test_group_stats_population_std():
    gs = M.group_stats([("noise", 2, 1.0), ("noise", 2, 3.0)])
    mean, std, _ = gs.cells[("noise", 2)]
    assert mean == 2.0 and std == 1.0


def test_group_stats_matches_two_pass_oracle():
    rng = np.random.default_rng(5)
    records = []
    for k in range(25):
        for lvl in range(1, 6):
            for _ in range(4):
                records.append((f"kind{k:02d}", lvl, float(rng.random())))
    gs = M.group_stats(records)
    assert len(gs.cells) == 125
    for key, (mean, std, n) in gs.cells.items():
        vals = [s for k, l, s in records if (k, l) == key]
        m = sum(vals) / len(vals)
        var = sum((v - m) ** 2 for v in vals) / len(vals)
        assert mean == pytest.approx(m, abs=1e-12)
        assert std == pytest.approx(math.sqrt(var), abs=1e-12)
        assert n == len(vals)
    assert set(gs.best) == {1, 2, 3, 4, 5}
