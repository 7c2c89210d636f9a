"""Raster transforms applied to watermark assets before re-embedding.

Three operations cover the robustness protocol: bilinear rescale, rotation
with canvas expansion, and gaussian blur (sigma = radius, kernel truncated at
3*sigma and renormalized). Everything resamples in linear 8-bit space without
gamma correction — a deliberate simplification, flagged here rather than
hidden. Quarter-turn rotations are handled exactly (no resampling), so four
successive 90-degree turns reproduce the input bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import InvalidInputError, TransformError

NAMED_PIPELINES: dict[str, list[dict]] = {
    "rescale": [{"kind": "rescale", "factor": 1.5}],
    "rotate": [{"kind": "rotate", "degrees": 45.0}],
    "gaussian": [{"kind": "gaussian", "radius": 3.0}],
    "rescale+rotate+gaussian": [
        {"kind": "rescale", "factor": 1.5},
        {"kind": "rotate", "degrees": 45.0},
        {"kind": "gaussian", "radius": 3.0},
    ],
}


@dataclass
class RasterImage:
    """Row-major 8-bit RGB(A) pixels."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.dtype != np.uint8:
            raise InvalidInputError("pixel data must be uint8")
        if arr.ndim != 3 or arr.shape[2] not in (3, 4):
            raise InvalidInputError("image must be (height, width, 3|4)")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError("image must be at least 1x1")
        self.pixels = arr

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    factor: float | None = None
    degrees: float | None = None
    radius: float | None = None
    children: tuple["TransformSpec", ...] = ()
    background: tuple[int, ...] | None = None

    @classmethod
    def from_dict(cls, obj: dict) -> "TransformSpec":
        kind = obj.get("kind")
        if kind == "rescale":
            return cls(kind="rescale", factor=float(obj["factor"]))
        if kind == "rotate":
            bg = obj.get("background")
            return cls(
                kind="rotate",
                degrees=float(obj["degrees"]),
                background=tuple(int(v) for v in bg) if bg is not None else None,
            )
        if kind == "gaussian":
            return cls(kind="gaussian", radius=float(obj["radius"]))
        if kind == "compose":
            return cls(
                kind="compose",
                children=tuple(cls.from_dict(c) for c in obj.get("children", [])),
            )
        raise InvalidInputError(f"unknown transform kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "rescale":
            return {"kind": "rescale", "factor": self.factor}
        if self.kind == "rotate":
            out = {"kind": "rotate", "degrees": self.degrees}
            if self.background is not None:
                out["background"] = list(self.background)
            return out
        if self.kind == "gaussian":
            return {"kind": "gaussian", "radius": self.radius}
        return {"kind": "compose", "children": [c.to_dict() for c in self.children]}


def parse_pipeline(spec) -> list[TransformSpec]:
    """A pipeline is a named preset or an explicit ordered list of stages."""
    if isinstance(spec, str):
        if spec not in NAMED_PIPELINES:
            raise InvalidInputError(
                f"unknown pipeline {spec!r}; presets: {sorted(NAMED_PIPELINES)}"
            )
        spec = NAMED_PIPELINES[spec]
    return [TransformSpec.from_dict(stage) for stage in spec]


def _to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)


def _resample_indices(out_size: int, in_size: int, factor: float):
    coords = (np.arange(out_size, dtype=np.float64) + 0.5) / factor - 0.5
    coords = np.clip(coords, 0.0, in_size - 1.0)
    i0 = np.floor(coords).astype(np.int64)
    frac = coords - i0
    i1 = np.minimum(i0 + 1, in_size - 1)
    return i0, i1, frac


def rescale(img: RasterImage, factor: float) -> RasterImage:
    """Bilinear rescale; output dims are round(factor * dims), at least 1."""
    if factor <= 0:
        raise InvalidInputError("scale factor must be positive")
    h, w = img.height, img.width
    out_h = max(1, int(math.floor(h * factor + 0.5)))
    out_w = max(1, int(math.floor(w * factor + 0.5)))
    arr = img.pixels.astype(np.float64)
    y0, y1, fy = _resample_indices(out_h, h, factor)
    rows = arr[y0] * (1.0 - fy)[:, None, None] + arr[y1] * fy[:, None, None]
    x0, x1, fx = _resample_indices(out_w, w, factor)
    out = rows[:, x0] * (1.0 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]
    return RasterImage(_to_uint8(out))


def rotate(
    img: RasterImage, degrees_cw: float, background: Sequence[int] | None = None
) -> RasterImage:
    """Rotate clockwise, expanding the canvas to the rotated bounding box.

    Exposed corners take the background fill (default black; pin it per audit
    because fill color shows up in embeddings). Multiples of 90 degrees are
    exact quarter turns with no resampling.
    """
    deg = float(degrees_cw) % 360.0
    if deg % 90.0 == 0.0:
        return RasterImage(np.rot90(img.pixels, k=-int(deg // 90)).copy())
    h, w = img.height, img.width
    theta = math.radians(deg)
    c, s = math.cos(theta), math.sin(theta)
    out_w = int(math.ceil(w * abs(c) + h * abs(s) - 1e-9))
    out_h = int(math.ceil(w * abs(s) + h * abs(c) - 1e-9))
    if background is None:
        background = (0,) * img.channels
    if len(background) != img.channels:
        raise InvalidInputError(
            f"background has {len(background)} values for {img.channels} channels"
        )
    xs = np.arange(out_w, dtype=np.float64) + 0.5 - out_w / 2.0
    ys = np.arange(out_h, dtype=np.float64) + 0.5 - out_h / 2.0
    px, py = np.meshgrid(xs, ys)
    # inverse of a clockwise rotation in y-down screen coordinates
    sx = c * px + s * py + w / 2.0 - 0.5
    sy = -s * px + c * py + h / 2.0 - 0.5
    valid = (sx >= 0.0) & (sx <= w - 1.0) & (sy >= 0.0) & (sy <= h - 1.0)
    sxc = np.clip(sx, 0.0, w - 1.0)
    syc = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sxc).astype(np.int64)
    y0 = np.floor(syc).astype(np.int64)
    fx = sxc - x0
    fy = syc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    arr = img.pixels.astype(np.float64)
    wx0 = (1.0 - fx)[..., None]
    wx1 = fx[..., None]
    wy0 = (1.0 - fy)[..., None]
    wy1 = fy[..., None]
    sampled = (
        arr[y0, x0] * wy0 * wx0
        + arr[y0, x1] * wy0 * wx1
        + arr[y1, x0] * wy1 * wx0
        + arr[y1, x1] * wy1 * wx1
    )
    out = np.empty((out_h, out_w, img.channels), dtype=np.float64)
    out[...] = np.asarray(background, dtype=np.float64)
    out[valid] = sampled[valid]
    return RasterImage(_to_uint8(out))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D gaussian taps truncated at 3*sigma, renormalized to sum 1."""
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    reach = max(1, int(math.floor(3.0 * sigma + 1e-9)))
    offsets = np.arange(-reach, reach + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def gaussian_blur_float(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable gaussian convolution on float64 data with edge clamping.

    This is the exact kernel the 8-bit :func:`gaussian_blur` quantizes; it is
    public so response shapes can be checked below quantization noise.
    """
    taps = gaussian_kernel(sigma)
    reach = (taps.size - 1) // 2
    out = np.zeros_like(arr)
    h = arr.shape[0]
    for off, weight in zip(range(-reach, reach + 1), taps):
        idx = np.clip(np.arange(h) + off, 0, h - 1)
        out += weight * arr[idx]
    result = np.zeros_like(out)
    w = arr.shape[1]
    for off, weight in zip(range(-reach, reach + 1), taps):
        idx = np.clip(np.arange(w) + off, 0, w - 1)
        result += weight * out[:, idx]
    return result


def gaussian_blur(img: RasterImage, radius: float) -> RasterImage:
    """Gaussian blur with sigma = radius; radius 0 is the identity."""
    if radius < 0:
        raise InvalidInputError("blur radius must be >= 0")
    if radius == 0:
        return RasterImage(img.pixels.copy())
    blurred = gaussian_blur_float(img.pixels.astype(np.float64), float(radius))
    return RasterImage(_to_uint8(blurred))


def apply_transform(img: RasterImage, spec: TransformSpec) -> RasterImage:
    if spec.kind == "rescale":
        return rescale(img, spec.factor)
    if spec.kind == "rotate":
        return rotate(img, spec.degrees, background=spec.background)
    if spec.kind == "gaussian":
        return gaussian_blur(img, spec.radius)
    if spec.kind == "compose":
        return compose(img, spec.children)
    raise InvalidInputError(f"unknown transform kind {spec.kind!r}")


def compose(img: RasterImage, specs: Sequence[TransformSpec]) -> RasterImage:
    """Apply stages left to right; an empty list is the identity."""
    current = img
    for i, spec in enumerate(specs):
        try:
            current = apply_transform(current, spec)
        except TransformError:
            raise
        except Exception as exc:
            raise TransformError(f"stage {i} ({spec.kind}): {exc}") from exc
    return current


def read_png(path) -> RasterImage:
    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA"):
            converted = im.copy()
        elif im.mode in ("LA", "PA") or (im.mode == "P" and "transparency" in im.info):
            converted = im.convert("RGBA")
        else:
            converted = im.convert("RGB")
    return RasterImage(np.asarray(converted, dtype=np.uint8).copy())


def write_png(img: RasterImage, path) -> None:
    mode = "RGB" if img.channels == 3 else "RGBA"
    Image.fromarray(img.pixels, mode=mode).save(path, format="PNG")
