"""Full-reference baselines (PSNR, SSIM) and evaluation statistics.

Correlation conventions: SRCC uses average ranks for ties, KRCC is tau-b
(tie-corrected), PLCC optionally maps predictions through a least-squares
cubic or a 4-parameter logistic before Pearson. group_stats uses the
population (divide-by-N) standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize, stats

from .imagebuf import validate_image


class MetricError(ValueError):
    pass


class UndefinedCorrelationError(MetricError):
    """A correlation was requested on a constant input vector."""


# ---------------------------------------------------------------------------
# full-reference image metrics

# Rec. 601 luminance weights
_LUMA = np.array([0.299, 0.587, 0.114])

SSIM_C1 = 1e-4  # (0.01)^2 for peak 1.0
SSIM_C2 = 9e-4  # (0.03)^2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(ref: np.ndarray, dist: np.ndarray) -> float:
    """PSNR in dB with peak 1.0; identical images give +inf."""
    ref = np.asarray(ref, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if ref.shape != dist.shape:
        raise MetricError(f"psnr: shape mismatch {ref.shape} vs {dist.shape}")
    mse = float(np.mean((ref - dist) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel1d(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2
    xs = np.arange(window) - half
    k = np.exp(-(xs**2) / (2 * sigma**2))
    return k / k.sum()


def _ssim_filter(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    # separable Gaussian, 'valid' crop applied by the caller
    out = ndimage.correlate1d(img, k, axis=0, mode="constant")
    return ndimage.correlate1d(out, k, axis=1, mode="constant")


def ssim(ref: np.ndarray, dist: np.ndarray) -> float:
    """Mean single-scale SSIM on Rec. 601 luminance, 11x11 Gaussian window."""
    ref = validate_image(np.asarray(ref, dtype=np.float64))
    dist = np.asarray(dist, dtype=np.float64)
    if ref.shape != dist.shape:
        raise MetricError(f"ssim: shape mismatch {ref.shape} vs {dist.shape}")
    h, w = ref.shape[:2]
    if min(h, w) < SSIM_WINDOW:
        raise MetricError(f"ssim: min side {min(h, w)} < window {SSIM_WINDOW}")
    x = ref @ _LUMA
    y = dist @ _LUMA
    k = _gaussian_kernel1d(SSIM_WINDOW, SSIM_SIGMA)
    half = SSIM_WINDOW // 2
    crop = (slice(half, h - half), slice(half, w - half))

    mu_x = _ssim_filter(x, k)[crop]
    mu_y = _ssim_filter(y, k)[crop]
    xx = _ssim_filter(x * x, k)[crop] - mu_x**2
    yy = _ssim_filter(y * y, k)[crop] - mu_y**2
    xy = _ssim_filter(x * y, k)[crop] - mu_x * mu_y

    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * xy + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (xx + yy + SSIM_C2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# rank statistics


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise MetricError("score vectors must be 1-D")
    if x.size != y.size:
        raise MetricError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise MetricError("need at least 2 samples")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise MetricError("scores must be finite")
    if np.all(x == x[0]):
        raise UndefinedCorrelationError("first input vector is constant")
    if np.all(y == y[0]):
        raise UndefinedCorrelationError("second input vector is constant")
    return x, y


def srcc(x, y) -> float:
    """Spearman rank correlation: Pearson on average ranks."""
    x, y = _check_pair(x, y)
    rx = stats.rankdata(x, method="average")
    ry = stats.rankdata(y, method="average")
    return float(np.corrcoef(rx, ry)[0, 1])


def krcc(x, y) -> float:
    """Kendall tau-b (tie-corrected)."""
    x, y = _check_pair(x, y)
    return float(stats.kendalltau(x, y, variant="b").statistic)


def _poly3_map(x, y):
    coeffs = np.polyfit(x, y, 3)
    return np.polyval(coeffs, x)


def _logistic4(x, a, b, c, d):
    return (a - b) / (1.0 + np.exp(-(x - c) / d)) + b


def _logistic4_map(x, y):
    p0 = [float(y.max()), float(y.min()), float(np.median(x)), float(np.std(x)) or 1.0]
    with np.errstate(over="ignore"):
        popt, _ = optimize.curve_fit(_logistic4, x, y, p0=p0, method="lm", maxfev=20000)
        return _logistic4(x, *popt)


def plcc(x, y, mapping: str = "none") -> float:
    """Pearson correlation, optionally after a monotone-ish regression of x onto y.

    Non-converged fits fall back to the raw coefficient (see plcc_report for
    the warning flag).
    """
    return plcc_report(x, y, mapping)[0]


def plcc_report(x, y, mapping: str = "none"):
    """Returns (plcc, fitted_x, fallback_flag)."""
    x, y = _check_pair(x, y)
    fallback = False
    fitted = x
    if mapping not in ("none", "poly3", "logistic4"):
        raise MetricError(f"unknown plcc mapping {mapping!r}")
    if mapping != "none":
        if x.size < 4:
            raise MetricError("mapped plcc needs at least 4 points")
        try:
            fitted = _poly3_map(x, y) if mapping == "poly3" else _logistic4_map(x, y)
            if not np.isfinite(fitted).all() or np.all(fitted == fitted[0]):
                raise FloatingPointError("degenerate fit")
        except Exception:
            fitted = x
            fallback = True
    r = float(np.corrcoef(fitted, y)[0, 1])
    return r, fitted, fallback


def normalize_scores(raw, lo: float = 0.0, hi: float = 5.0) -> np.ndarray:
    """Min-max affine map onto [lo, hi]; endpoints are attained."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size < 2:
        raise MetricError("need at least 2 scores to normalize")
    mn, mx = float(raw.min()), float(raw.max())
    if mx == mn:
        raise MetricError("degenerate score spread: max == min")
    return (raw - mn) / (mx - mn) * (hi - lo) + lo


# ---------------------------------------------------------------------------
# grouped distribution stats (per-kind, per-level mean/std tables)


@dataclass
class GroupStats:
    """Per-(kind, level) population stats plus per-kind averages and flags."""

    cells: dict = field(default_factory=dict)  # (kind, level) -> (mean, std, n)
    kind_avg: dict = field(default_factory=dict)  # kind -> (mean of cell means, mean of cell stds)
    best: dict = field(default_factory=dict)  # level -> kind with highest mean
    worst: dict = field(default_factory=dict)  # level -> kind with lowest mean
    warnings: list = field(default_factory=list)


def group_stats(records) -> GroupStats:
    """``records`` is an iterable of (kind, level, score) triples."""
    groups: dict = {}
    for kind, level, score in records:
        groups.setdefault((kind, int(level)), []).append(float(score))
    out = GroupStats()
    kinds: dict = {}
    for key in sorted(groups):
        vals = np.asarray(groups[key])
        if vals.size == 0:
            out.warnings.append(f"empty group {key}")
            continue
        mean = float(vals.mean())
        std = float(vals.std())  # population std
        out.cells[key] = (mean, std, int(vals.size))
        kinds.setdefault(key[0], []).append((mean, std))
    for kind, pairs in kinds.items():
        out.kind_avg[kind] = (
            float(np.mean([p[0] for p in pairs])),
            float(np.mean([p[1] for p in pairs])),
        )
    levels = sorted({lvl for _, lvl in out.cells})
    for lvl in levels:
        col = {k: m for (k, l), (m, _, _) in out.cells.items() if l == lvl}
        if col:
            out.best[lvl] = max(col, key=col.get)
            out.worst[lvl] = min(col, key=col.get)
    return out
