"""Deterministic synthetic image distortions: 25 kinds, 7 categories, 5 levels.

Each kind has a frozen per-level parameter table (KADID-style ramps). Applying
a distortion is a pure function of (image, kind, level, seed): all stochastic
kinds draw exclusively from a generator seeded by the spec seed, so repeated
calls are bit-identical. Outputs are clamped to [0, 1] and keep the input
shape.

Per-frame batch seeds follow frame_seed = seed XOR splitmix64(frame_index),
so frames of one episode share the (kind, level) but decorrelate their noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .imagebuf import clamp01, validate_image
from .rng import frame_seed, make_rng

LEVELS = (1, 2, 3, 4, 5)

CATEGORIES = {
    "D.1": "Blurs",
    "D.2": "Color distortions",
    "D.3": "Compression",
    "D.4": "Noise",
    "D.5": "Brightness change",
    "D.6": "Spatial distortions",
    "D.7": "Sharpness and contrast",
}


class DistortionError(ValueError):
    pass


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    level: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DistortionError(f"unknown distortion kind {self.kind!r}")
        if self.level not in LEVELS:
            raise DistortionError(f"level must be in 1..5, got {self.level}")

    @property
    def category(self) -> str:
        return _KINDS[self.kind].category


@dataclass(frozen=True)
class KindInfo:
    kind: str
    display: str
    category: str
    stochastic: bool
    min_side: int
    levels: tuple  # one parameter dict per level 1..5


def _ramp(name, values, **extra):
    return tuple({name: v, **extra} for v in values)


# Frozen parameter tables; severity strictly monotone in level for the
# monotone families listed in MONOTONE_FAMILIES.
_KINDS: dict[str, KindInfo] = {}


def _register(kind, display, category, levels, stochastic=False, min_side=8):
    _KINDS[kind] = KindInfo(kind, display, category, stochastic, min_side, levels)


_register("gaussian_blur", "Gaussian blur", "D.1", _ramp("sigma", (1.0, 2.0, 3.0, 4.0, 6.0)))
_register("lens_blur", "Lens blur", "D.1", _ramp("radius", (2, 3, 4, 6, 8)))
_register("motion_blur", "Motion blur", "D.1", _ramp("length", (3, 5, 7, 9, 11)), stochastic=True)

_register("color_diffusion", "Color diffusion", "D.2", _ramp("sigma", (2.0, 4.0, 6.0, 8.0, 12.0)))
_register("color_shift", "Color shift", "D.2", _ramp("offset", (1, 2, 3, 4, 5)))
_register("color_quantization", "Color quantization", "D.2", _ramp("levels", (48, 32, 16, 8, 4)))
_register("hsv_saturation", "HSV saturation", "D.2", _ramp("factor", (0.8, 0.6, 0.4, 0.2, 0.05)))
_register("lab_saturation", "Lab saturation", "D.2", _ramp("factor", (0.8, 0.6, 0.4, 0.2, 0.1)))

_register("jpeg2000", "JPEG2000 compression", "D.3", _ramp("step", (0.02, 0.05, 0.1, 0.2, 0.4)), min_side=16)
_register("jpeg", "JPEG compression", "D.3", _ramp("scale", (0.5, 1.0, 2.0, 4.0, 8.0)), min_side=16)

_register("white_noise", "White noise", "D.4", _ramp("sigma", (0.02, 0.05, 0.09, 0.14, 0.20)), stochastic=True)
_register("color_noise", "Color noise", "D.4", _ramp("sigma", (0.02, 0.05, 0.09, 0.14, 0.20)), stochastic=True)
_register("impulse_noise", "Impulse noise", "D.4", _ramp("p", (0.01, 0.03, 0.06, 0.10, 0.18)), stochastic=True)
_register("multiplicative_noise", "Multiplicative noise", "D.4", _ramp("sigma", (0.05, 0.10, 0.17, 0.25, 0.35)), stochastic=True)
_register("gaussian_denoise", "Gaussian Denoise", "D.4", _ramp("sigma", (0.02, 0.05, 0.09, 0.14, 0.20), filter_sigma=1.0), stochastic=True)

_register("brighten", "Brighten", "D.5", _ramp("gamma", (0.9, 0.8, 0.7, 0.55, 0.4)))
_register("darken", "Darken", "D.5", _ramp("gamma", (1 / 0.9, 1 / 0.8, 1 / 0.7, 1 / 0.55, 1 / 0.4)))
_register("mean_shift", "Mean shift", "D.5", _ramp("offset", (0.05, 0.10, 0.15, 0.20, 0.25)))

_register("jitter", "Jitter", "D.6", _ramp("displacement", (1, 2, 3, 4, 5)), stochastic=True)
_register("non_eccentricity_patch", "Non-eccentricity patch", "D.6",
          _ramp("max_shift", (2, 4, 6, 8, 10), patch=8), stochastic=True, min_side=24)
_register("pixelate", "Pixelate", "D.6", _ramp("block", (2, 3, 4, 8, 16)), min_side=16)
_register("quantization", "Quantization", "D.6", _ramp("bins", (24, 16, 10, 6, 4)))
_register("color_block", "Color block", "D.6", _ramp("count", (2, 4, 6, 8, 10), block=16), stochastic=True, min_side=16)

_register("high_sharpen", "High sharpen", "D.7", _ramp("amount", (1.0, 2.0, 3.0, 6.0, 12.0)))
_register("contrast_change", "Contrast change", "D.7", _ramp("scale", (0.9, 0.75, 0.6, 0.45, 0.3)))

# Families whose mean PSNR must be non-increasing from level 1 to 5.
MONOTONE_FAMILIES = (
    "gaussian_blur", "lens_blur", "white_noise", "color_noise", "impulse_noise",
    "multiplicative_noise", "jpeg", "jpeg2000", "pixelate", "color_quantization",
    "darken",
)


def list_kinds() -> list[KindInfo]:
    """All 25 kinds in stable (catalog) order."""
    return list(_KINDS.values())


def kinds_in_category(category: str) -> list[str]:
    return [k.kind for k in _KINDS.values() if k.category == category]


def level_params(kind: str, level: int) -> dict:
    if kind not in _KINDS:
        raise DistortionError(f"unknown distortion kind {kind!r}")
    if level not in LEVELS:
        raise DistortionError(f"level must be in 1..5, got {level}")
    return dict(_KINDS[kind].levels[level - 1])


# ---------------------------------------------------------------------------
# colour space helpers


def _rgb_to_hsv(img):
    mx = img.max(axis=2)
    mn = img.min(axis=2)
    d = mx - mn
    h = np.zeros_like(mx)
    mask = d > 0
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    idx = mask & (mx == r)
    h[idx] = np.mod((g - b)[idx] / d[idx], 6.0)
    idx = mask & (mx == g) & (mx != r)
    h[idx] = (b - r)[idx] / d[idx] + 2.0
    idx = mask & (mx == b) & (mx != r) & (mx != g)
    h[idx] = (r - g)[idx] / d[idx] + 4.0
    h *= 60.0
    s = np.where(mx > 0, d / np.maximum(mx, 1e-12), 0.0)
    return h, s, mx


def _hsv_to_rgb(h, s, v):
    c = v * s
    hp = h / 60.0
    x = c * (1.0 - np.abs(np.mod(hp, 2.0) - 1.0))
    z = np.zeros_like(c)
    conds = [(hp < 1), (hp < 2), (hp < 3), (hp < 4), (hp < 5), (hp >= 5)]
    rgbs = [(c, x, z), (x, c, z), (z, c, x), (z, x, c), (x, z, c), (c, z, x)]
    out = np.zeros(h.shape + (3,))
    done = np.zeros(h.shape, dtype=bool)
    for cond, (rr, gg, bb) in zip(conds, rgbs):
        m = cond & ~done
        out[m, 0], out[m, 1], out[m, 2] = rr[m], gg[m], bb[m]
        done |= cond
    return out + (v - c)[..., None]


_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_SRGB = np.linalg.inv(_SRGB_TO_XYZ)
_D65 = np.array([0.95047, 1.0, 1.08883])


def _srgb_linearize(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _srgb_delinearize(c):
    c = np.clip(c, 0.0, None)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1 / 2.4) - 0.055)


def _lab_f(t):
    d = 6.0 / 29.0
    return np.where(t > d**3, np.cbrt(t), t / (3 * d * d) + 4.0 / 29.0)


def _lab_finv(t):
    d = 6.0 / 29.0
    return np.where(t > d, t**3, 3 * d * d * (t - 4.0 / 29.0))


def rgb_to_lab(img):
    xyz = _srgb_linearize(img) @ _SRGB_TO_XYZ.T / _D65
    fx, fy, fz = _lab_f(xyz[..., 0]), _lab_f(xyz[..., 1]), _lab_f(xyz[..., 2])
    return np.stack([116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)], axis=-1)


def lab_to_rgb(lab):
    fy = (lab[..., 0] + 16) / 116
    fx = fy + lab[..., 1] / 500
    fz = fy - lab[..., 2] / 200
    xyz = np.stack([_lab_finv(fx), _lab_finv(fy), _lab_finv(fz)], axis=-1) * _D65
    return _srgb_delinearize(xyz @ _XYZ_TO_SRGB.T)


_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCBCR_INV = np.linalg.inv(_YCBCR)


def _rgb_to_ycbcr(img):
    return img @ _YCBCR.T


def _ycbcr_to_rgb(ycc):
    return ycc @ _YCBCR_INV.T


# ---------------------------------------------------------------------------
# blur family


def _gaussian(img, sigma):
    return ndimage.gaussian_filter(img, sigma=(sigma, sigma, 0), mode="nearest")


def _conv_kernel(img, kernel):
    out = np.empty_like(img)
    for c in range(3):
        out[..., c] = ndimage.convolve(img[..., c], kernel, mode="nearest")
    return out


def _d_gaussian_blur(img, p, rng):
    return _gaussian(img, p["sigma"])


def _d_lens_blur(img, p, rng):
    r = p["radius"]
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    disk = (yy * yy + xx * xx <= r * r).astype(np.float64)
    return _conv_kernel(img, disk / disk.sum())


def _d_motion_blur(img, p, rng):
    length = p["length"]
    angle = rng.uniform(0.0, np.pi)
    k = np.zeros((length, length))
    c = (length - 1) / 2
    for t in np.linspace(-c, c, 4 * length):
        y, x = c + t * np.sin(angle), c + t * np.cos(angle)
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        for dy in (0, 1):
            for dx in (0, 1):
                yy, xx = y0 + dy, x0 + dx
                if 0 <= yy < length and 0 <= xx < length:
                    k[yy, xx] += (1 - abs(y - yy)) * (1 - abs(x - xx))
    return _conv_kernel(img, k / k.sum())


# ---------------------------------------------------------------------------
# colour family


def _d_color_diffusion(img, p, rng):
    ycc = _rgb_to_ycbcr(img)
    s = p["sigma"]
    ycc[..., 1] = ndimage.gaussian_filter(ycc[..., 1], s, mode="nearest")
    ycc[..., 2] = ndimage.gaussian_filter(ycc[..., 2], s, mode="nearest")
    return _ycbcr_to_rgb(ycc)


def _shift_2d(ch, dy, dx):
    out = np.pad(ch, ((abs(dy), abs(dy)), (abs(dx), abs(dx))), mode="edge")
    h, w = ch.shape
    return out[abs(dy) - dy : abs(dy) - dy + h, abs(dx) - dx : abs(dx) - dx + w]


def _d_color_shift(img, p, rng):
    d = p["offset"]
    out = img.copy()
    out[..., 0] = _shift_2d(img[..., 0], d, d)
    out[..., 2] = _shift_2d(img[..., 2], -d, -d)
    return out


def _d_color_quantization(img, p, rng):
    k = p["levels"]
    return np.clip(np.floor(img * k), 0, k - 1) / (k - 1)


def _d_hsv_saturation(img, p, rng):
    h, s, v = _rgb_to_hsv(img)
    return _hsv_to_rgb(h, np.clip(s * p["factor"], 0, 1), v)


def _d_lab_saturation(img, p, rng):
    lab = rgb_to_lab(img)
    lab[..., 1] *= p["factor"]
    lab[..., 2] *= p["factor"]
    return lab_to_rgb(lab)


# ---------------------------------------------------------------------------
# compression family (artifact simulation, no bitstreams)

# standard JPEG luminance quantization table, rescaled to [0,1] pixel range
_JPEG_QTABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64) / 255.0


def _blockwise(ch, block):
    h, w = ch.shape
    ph = (-h) % block
    pw = (-w) % block
    chp = np.pad(ch, ((0, ph), (0, pw)), mode="edge")
    hb, wb = chp.shape[0] // block, chp.shape[1] // block
    blocks = chp.reshape(hb, block, wb, block).transpose(0, 2, 1, 3)
    return blocks, (h, w)


def _unblock(blocks, hw, block):
    hb, wb = blocks.shape[:2]
    chp = blocks.transpose(0, 2, 1, 3).reshape(hb * block, wb * block)
    return chp[: hw[0], : hw[1]]


def _d_jpeg(img, p, rng):
    scale = p["scale"]
    ycc = _rgb_to_ycbcr(img)
    out = np.empty_like(ycc)
    for c in range(3):
        q = _JPEG_QTABLE * scale * (1.0 if c == 0 else 1.5)
        blocks, hw = _blockwise(ycc[..., c], 8)
        coefs = sfft.dctn(blocks, axes=(2, 3), norm="ortho")
        coefs = np.round(coefs / q) * q
        out[..., c] = _unblock(sfft.idctn(coefs, axes=(2, 3), norm="ortho"), hw, 8)
    return _ycbcr_to_rgb(out)


def _haar_fwd(ch):
    a = (ch[0::2] + ch[1::2]) / 2
    d = (ch[0::2] - ch[1::2]) / 2
    return a, d


def _haar_inv(a, d):
    out = np.empty((a.shape[0] * 2,) + a.shape[1:], dtype=a.dtype)
    out[0::2] = a + d
    out[1::2] = a - d
    return out


def _haar2_fwd(ch):
    a, dv = _haar_fwd(ch)
    a, dh = _haar_fwd(a.T)
    return a.T, dh.T, dv


def _haar2_inv(a, dh, dv):
    at = _haar_inv(a.T, dh.T)
    return _haar_inv(at.T, dv)


def _d_jpeg2000(img, p, rng):
    step = p["step"]

    def q(x, s):
        return np.round(x / s) * s

    out = np.empty_like(img)
    for c in range(3):
        ch = img[..., c]
        h, w = ch.shape
        ph, pw = (-h) % 4, (-w) % 4
        chp = np.pad(ch, ((0, ph), (0, pw)), mode="edge")
        a1, dh1, dv1 = _haar2_fwd(chp)
        a2, dh2, dv2 = _haar2_fwd(a1)
        # quantize detail subbands, finer step at the coarse level
        dh1, dv1 = q(dh1, step), q(dv1, step)
        dh2, dv2 = q(dh2, step / 2), q(dv2, step / 2)
        a1 = _haar2_inv(a2, dh2, dv2)
        out[..., c] = _haar2_inv(a1, dh1, dv1)[:h, :w]
    return out


# ---------------------------------------------------------------------------
# noise family


def _d_white_noise(img, p, rng):
    n = rng.normal(0.0, p["sigma"], img.shape[:2])
    return img + n[..., None]


def _d_color_noise(img, p, rng):
    return img + rng.normal(0.0, p["sigma"], img.shape)


def _d_impulse_noise(img, p, rng):
    u = rng.random(img.shape[:2])
    out = img.copy()
    out[u < p["p"] / 2] = 1.0
    out[u > 1.0 - p["p"] / 2] = 0.0
    return out


def _d_multiplicative_noise(img, p, rng):
    return img * (1.0 + rng.normal(0.0, p["sigma"], img.shape))


def _d_gaussian_denoise(img, p, rng):
    noisy = img + rng.normal(0.0, p["sigma"], img.shape[:2])[..., None]
    return _gaussian(np.clip(noisy, 0, 1), p["filter_sigma"])


# ---------------------------------------------------------------------------
# brightness family


def _d_brighten(img, p, rng):
    return img ** p["gamma"]


def _d_darken(img, p, rng):
    return img ** p["gamma"]


def _d_mean_shift(img, p, rng):
    return img + p["offset"]


# ---------------------------------------------------------------------------
# spatial family


def _d_jitter(img, p, rng):
    d = p["displacement"]
    h, w = img.shape[:2]
    dy = rng.uniform(-d, d, (h, w))
    dx = rng.uniform(-d, d, (h, w))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [np.clip(yy + dy, 0, h - 1), np.clip(xx + dx, 0, w - 1)]
    out = np.empty_like(img)
    for c in range(3):
        out[..., c] = ndimage.map_coordinates(img[..., c], coords, order=1, mode="nearest")
    return out


def _d_non_eccentricity_patch(img, p, rng):
    patch = p["patch"]
    shift = p["max_shift"]
    h, w = img.shape[:2]
    out = img.copy()
    n_patches = (h * w) // (patch * patch * 4)
    for _ in range(n_patches):
        sy = int(rng.integers(shift, h - patch - shift))
        sx = int(rng.integers(shift, w - patch - shift))
        dy = int(rng.integers(-shift, shift + 1))
        dx = int(rng.integers(-shift, shift + 1))
        out[sy + dy : sy + dy + patch, sx + dx : sx + dx + patch] = img[sy : sy + patch, sx : sx + patch]
    return out


def _d_pixelate(img, p, rng):
    b = p["block"]
    h, w = img.shape[:2]
    out = np.empty_like(img)
    for c in range(3):
        blocks, _ = _blockwise(img[..., c], b)
        means = blocks.mean(axis=(2, 3))
        out[..., c] = means[(np.arange(h) // b)[:, None], (np.arange(w) // b)[None, :]]
    return out


def _d_quantization(img, p, rng):
    k = p["bins"]
    y = img @ np.array([0.299, 0.587, 0.114])
    yq = np.clip(np.floor(y * k), 0, k - 1) / (k - 1)
    return img + (yq - y)[..., None]


def _d_color_block(img, p, rng):
    b = p["block"]
    h, w = img.shape[:2]
    out = img.copy()
    for _ in range(p["count"]):
        y = int(rng.integers(0, h - b + 1))
        x = int(rng.integers(0, w - b + 1))
        out[y : y + b, x : x + b] = rng.random(3)
    return out


# ---------------------------------------------------------------------------
# sharpness / contrast family


def _d_high_sharpen(img, p, rng):
    return img + p["amount"] * (img - _gaussian(img, 1.5))


def _d_contrast_change(img, p, rng):
    return (img - 0.5) * p["scale"] + 0.5


_APPLY = {
    "gaussian_blur": _d_gaussian_blur,
    "lens_blur": _d_lens_blur,
    "motion_blur": _d_motion_blur,
    "color_diffusion": _d_color_diffusion,
    "color_shift": _d_color_shift,
    "color_quantization": _d_color_quantization,
    "hsv_saturation": _d_hsv_saturation,
    "lab_saturation": _d_lab_saturation,
    "jpeg2000": _d_jpeg2000,
    "jpeg": _d_jpeg,
    "white_noise": _d_white_noise,
    "color_noise": _d_color_noise,
    "impulse_noise": _d_impulse_noise,
    "multiplicative_noise": _d_multiplicative_noise,
    "gaussian_denoise": _d_gaussian_denoise,
    "brighten": _d_brighten,
    "darken": _d_darken,
    "mean_shift": _d_mean_shift,
    "jitter": _d_jitter,
    "non_eccentricity_patch": _d_non_eccentricity_patch,
    "pixelate": _d_pixelate,
    "quantization": _d_quantization,
    "color_block": _d_color_block,
    "high_sharpen": _d_high_sharpen,
    "contrast_change": _d_contrast_change,
}

assert set(_APPLY) == set(_KINDS)


def apply_distortion(img: np.ndarray, spec: DistortionSpec) -> np.ndarray:
    """Apply one distortion; pure in (img, spec), output clamped to [0, 1]."""
    img = validate_image(np.asarray(img, dtype=np.float64))
    info = _KINDS[spec.kind]
    if min(img.shape[:2]) < info.min_side:
        raise DistortionError(
            f"{spec.kind} needs min side {info.min_side}, image is {img.shape[:2]}"
        )
    rng = make_rng(spec.seed)
    params = level_params(spec.kind, spec.level)
    out = _APPLY[spec.kind](img.copy(), params, rng)
    out = clamp01(np.nan_to_num(out, nan=0.0, posinf=1.0, neginf=0.0))
    if out.shape != img.shape:
        raise DistortionError(f"{spec.kind} changed shape {img.shape} -> {out.shape}")
    return out


def distort_batch(imgs, spec: DistortionSpec) -> list[np.ndarray]:
    """Apply one (kind, level) to every frame with frame-indexed seeds."""
    imgs = list(imgs)
    if not imgs:
        raise DistortionError("distort_batch: empty batch")
    out = []
    for i, img in enumerate(imgs):
        fs = DistortionSpec(spec.kind, spec.level, frame_seed(spec.seed, i))
        out.append(apply_distortion(img, fs))
    return out
