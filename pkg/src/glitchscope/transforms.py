"""Seeded, deterministic image transformations.

Seven transform kinds are implemented; the default suite enables six of them
(``elastic`` is opt-in). All randomness for one application is drawn from the
portable stream seeded by ``(spec.seed, image_id)`` (see :mod:`glitchscope.rng`),
so re-running a transform on the same image is bit-identical.

Geometric kinds resample with bilinear interpolation; samples falling outside
the source image blend toward black. Parameter draws happen in a fixed,
documented order per kind so streams stay aligned across versions:

* random_rotation: angle
* random_affine: angle, translate_x, translate_y, scale, shear
* random_perspective: apply-gate, then 8 corner offsets
  (TLx, TLy, TRx, TRy, BRx, BRy, BLx, BLy)
* random_inversion: apply-gate
* elastic: dx field row-major, then dy field row-major

Transforms whose sampled parameters describe the identity mapping return the
input pixels unchanged, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ValidationError
from .images import ImageBuffer
from .rng import PortableRng, derive_seed, stream_for

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# Per-kind parameter names and defaults. Defaults follow the suite's goal of
# perturbing images without destroying their content.
KIND_DEFAULTS: Mapping[str, Mapping[str, object]] = MappingProxyType({
    "grayscale": MappingProxyType({}),
    "horizontal_flip": MappingProxyType({}),
    "random_rotation": MappingProxyType({"max_degrees": 30.0}),
    "random_affine": MappingProxyType({
        "max_translate_fraction": 0.1,
        "max_degrees": 15.0,
        "scale_range": (0.9, 1.1),
        "max_shear_degrees": 10.0,
    }),
    "random_perspective": MappingProxyType({
        "distortion_scale": 0.5,
        "apply_probability": 1.0,
    }),
    "random_inversion": MappingProxyType({"apply_probability": 0.5}),
    "elastic": MappingProxyType({"alpha": 12.0, "sigma": 4.0}),
})

TRANSFORM_KINDS: tuple[str, ...] = tuple(KIND_DEFAULTS)
DEFAULT_SUITE: tuple[str, ...] = (
    "grayscale",
    "horizontal_flip",
    "random_rotation",
    "random_affine",
    "random_perspective",
    "random_inversion",
)


@dataclass(frozen=True)
class TransformSpec:
    """One transform kind with its parameters and stream seed."""

    kind: str
    seed: int = 0
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KIND_DEFAULTS:
            raise ValidationError(
                f"unknown transform {self.kind!r}; expected one of {sorted(KIND_DEFAULTS)}"
            )
        defaults = KIND_DEFAULTS[self.kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValidationError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        merged = dict(defaults)
        merged.update(self.params)
        _validate_params(self.kind, merged)
        object.__setattr__(self, "params", MappingProxyType(merged))


def _validate_params(kind: str, p: Mapping[str, object]) -> None:
    for name in ("max_degrees", "max_translate_fraction", "max_shear_degrees",
                 "distortion_scale", "alpha", "sigma"):
        if name in p and not float(p[name]) >= 0:  # noqa: SIM300 - rejects NaN too
            raise ValidationError(f"{kind}: {name} must be >= 0, got {p[name]!r}")
    if "apply_probability" in p:
        prob = float(p["apply_probability"])
        if not (0.0 <= prob <= 1.0):
            raise ValidationError(f"{kind}: apply_probability must lie in [0, 1], got {prob!r}")
    if "scale_range" in p:
        rng = tuple(float(x) for x in p["scale_range"])  # type: ignore[arg-type]
        if len(rng) != 2 or not (0 < rng[0] <= rng[1]):
            raise ValidationError(f"{kind}: scale_range must be (lo, hi) with 0 < lo <= hi")


def grayscale_value(r: int, g: int, b: int) -> int:
    """Luma for one pixel under the 0.299/0.587/0.114 weighting."""
    return int(np.rint(GRAY_WEIGHTS[0] * r + GRAY_WEIGHTS[1] * g + GRAY_WEIGHTS[2] * b))


def _grayscale(pixels: np.ndarray) -> np.ndarray:
    luma = (GRAY_WEIGHTS[0] * pixels[:, :, 0].astype(np.float64)
            + GRAY_WEIGHTS[1] * pixels[:, :, 1]
            + GRAY_WEIGHTS[2] * pixels[:, :, 2])
    y = np.rint(luma).astype(np.uint8)
    return np.repeat(y[:, :, None], 3, axis=2)


def _sample_bilinear(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample source pixels at float coordinates; outside contributes black."""
    h, w = pixels.shape[:2]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]

    src = pixels.astype(np.float64)
    out = np.zeros(xs.shape + (3,), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            weight = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            vals = np.zeros_like(out)
            vals[inside] = src[yi[inside], xi[inside]]
            out += weight * vals
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _inverse_map_affine(pixels: np.ndarray, inverse: np.ndarray) -> np.ndarray:
    """Apply a 3x3 inverse (output -> source) map with bilinear sampling."""
    h, w = pixels.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    coords = np.stack([xs.ravel(), ys.ravel(), np.ones(h * w)], axis=0)
    src = inverse @ coords
    # Homographies need the perspective divide; affine rows leave z == 1.
    z = src[2]
    sx = (src[0] / z).reshape(h, w)
    sy = (src[1] / z).reshape(h, w)
    return _sample_bilinear(pixels, sx, sy)


def _is_identity_matrix(m: np.ndarray) -> bool:
    return bool(np.allclose(m, np.eye(3), atol=0.0, rtol=0.0))


def _rotation_matrix(angle_degrees: float, cx: float, cy: float) -> np.ndarray:
    t = math.radians(angle_degrees)
    c, s = math.cos(t), math.sin(t)
    to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)
    back = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
    return back @ rot @ to_origin


def _apply_rotation(image: ImageBuffer, spec: TransformSpec, rng: PortableRng) -> np.ndarray:
    max_deg = float(spec.params["max_degrees"])
    if max_deg == 0.0:
        return image.pixels
    angle = rng.uniform(-max_deg, max_deg)
    if angle == 0.0:
        return image.pixels
    cx, cy = (image.width - 1) / 2.0, (image.height - 1) / 2.0
    forward = _rotation_matrix(angle, cx, cy)
    return _inverse_map_affine(image.pixels, np.linalg.inv(forward))


def _apply_affine(image: ImageBuffer, spec: TransformSpec, rng: PortableRng) -> np.ndarray:
    p = spec.params
    max_t = float(p["max_translate_fraction"])
    max_deg = float(p["max_degrees"])
    s_lo, s_hi = (float(x) for x in p["scale_range"])  # type: ignore[misc]
    max_shear = float(p["max_shear_degrees"])

    if max_t == 0.0 and max_deg == 0.0 and s_lo == s_hi == 1.0 and max_shear == 0.0:
        return image.pixels

    angle = rng.uniform(-max_deg, max_deg) if max_deg > 0 else 0.0
    tx = rng.uniform(-max_t, max_t) * image.width if max_t > 0 else 0.0
    ty = rng.uniform(-max_t, max_t) * image.height if max_t > 0 else 0.0
    scale = rng.uniform(s_lo, s_hi) if s_lo != s_hi else s_lo
    shear = rng.uniform(-max_shear, max_shear) if max_shear > 0 else 0.0

    cx, cy = (image.width - 1) / 2.0, (image.height - 1) / 2.0
    t = math.radians(angle)
    c, s = math.cos(t), math.sin(t)
    sh = math.tan(math.radians(shear))
    # Forward map about the center: rotate @ scale @ shear-x, then translate.
    lin = np.array([[c, -s], [s, c]]) @ (scale * np.array([[1.0, sh], [0.0, 1.0]]))
    forward = np.eye(3)
    forward[:2, :2] = lin
    forward[0, 2] = cx + tx - lin[0, 0] * cx - lin[0, 1] * cy
    forward[1, 2] = cy + ty - lin[1, 0] * cx - lin[1, 1] * cy
    if _is_identity_matrix(forward):
        return image.pixels
    return _inverse_map_affine(image.pixels, np.linalg.inv(forward))


def _perspective_coeffs(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 homography mapping each src corner onto its dst corner."""
    rows = []
    rhs = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rhs.append(u)
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.append(v)
    coeffs = np.linalg.solve(np.asarray(rows, dtype=np.float64), np.asarray(rhs, dtype=np.float64))
    return np.append(coeffs, 1.0).reshape(3, 3)


def _apply_perspective(image: ImageBuffer, spec: TransformSpec, rng: PortableRng) -> np.ndarray:
    p = spec.params
    prob = float(p["apply_probability"])
    if rng.random() >= prob:
        return image.pixels
    d = float(p["distortion_scale"])
    w, h = image.width, image.height
    # A 1-pixel-wide or -tall image has coincident corners; no quad to warp.
    if d == 0.0 or w < 2 or h < 2:
        return image.pixels
    half_w, half_h = d * w / 2.0, d * h / 2.0
    src = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    dst = np.array([
        [rng.uniform(0, half_w), rng.uniform(0, half_h)],
        [w - 1 - rng.uniform(0, half_w), rng.uniform(0, half_h)],
        [w - 1 - rng.uniform(0, half_w), h - 1 - rng.uniform(0, half_h)],
        [rng.uniform(0, half_w), h - 1 - rng.uniform(0, half_h)],
    ])
    if np.array_equal(src, dst):
        return image.pixels
    forward = _perspective_coeffs(src, dst)
    return _inverse_map_affine(image.pixels, np.linalg.inv(forward))


def _apply_inversion(image: ImageBuffer, spec: TransformSpec, rng: PortableRng) -> np.ndarray:
    prob = float(spec.params["apply_probability"])
    if rng.random() < prob:
        return (255 - image.pixels.astype(np.int16)).astype(np.uint8)
    return image.pixels


def _apply_elastic(image: ImageBuffer, spec: TransformSpec, rng: PortableRng) -> np.ndarray:
    alpha = float(spec.params["alpha"])
    sigma = float(spec.params["sigma"])
    if alpha == 0.0:
        return image.pixels
    h, w = image.height, image.width
    dx = np.array(rng.uniforms(h * w, -1.0, 1.0), dtype=np.float64).reshape(h, w) * alpha
    dy = np.array(rng.uniforms(h * w, -1.0, 1.0), dtype=np.float64).reshape(h, w) * alpha
    if sigma > 0.0:
        dx = gaussian_filter(dx, sigma=sigma, mode="reflect")
        dy = gaussian_filter(dy, sigma=sigma, mode="reflect")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return _sample_bilinear(image.pixels, xs + dx, ys + dy)


def apply(spec: TransformSpec, image: ImageBuffer, image_id: str = "") -> ImageBuffer:
    """Apply one transform; output always has the input's dimensions."""
    rng = stream_for(spec.seed, image_id)
    if spec.kind == "grayscale":
        out = _grayscale(image.pixels)
    elif spec.kind == "horizontal_flip":
        out = image.pixels[:, ::-1, :]
    elif spec.kind == "random_rotation":
        out = _apply_rotation(image, spec, rng)
    elif spec.kind == "random_affine":
        out = _apply_affine(image, spec, rng)
    elif spec.kind == "random_perspective":
        out = _apply_perspective(image, spec, rng)
    elif spec.kind == "random_inversion":
        out = _apply_inversion(image, spec, rng)
    elif spec.kind == "elastic":
        out = _apply_elastic(image, spec, rng)
    else:  # pragma: no cover - spec validation rejects unknown kinds
        raise ValidationError(f"unknown transform {spec.kind!r}")
    return ImageBuffer(pixels=np.ascontiguousarray(out))


def make_suite(config: Mapping[str, Mapping[str, object] | None] | None = None,
               base_seed: int = 0) -> list[TransformSpec]:
    """Build the transformation suite.

    ``config`` maps transform name to a parameter record (or null for
    defaults); ``None`` selects the default six-transform suite. Per-spec
    seeds derive from ``base_seed`` and the kind name unless a record
    supplies an explicit ``seed``.
    """
    if config is None:
        names: list[tuple[str, dict]] = [(k, {}) for k in DEFAULT_SUITE]
    else:
        names = [(k, dict(v) if v else {}) for k, v in config.items()]
    if not names:
        raise ValidationError("no transforms selected")
    specs = []
    for kind, params in names:
        seed = params.pop("seed", None)
        if seed is None:
            seed = derive_seed(base_seed, kind)
        specs.append(TransformSpec(kind=kind, seed=int(seed), params=params))
    return specs
