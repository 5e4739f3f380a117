"""Alpha compositing of interval samples and the brute-force quadrature reference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_positive_int
from .field import DensityField
from .geometry import Ray, RayBundle, as_bundle
from .sampler import PackedSamples, padded

__all__ = ["RenderOutput", "OverlapError", "render", "oracle_render", "oracle_render_bundle", "psnr",
           "PSNR_MAX"]

PSNR_MAX = 300.0


class OverlapError(ValueError):
    """Intervals of one ray overlap or are out of order."""


@dataclass
class RenderOutput:
    """Premultiplied per-ray results; `weights` follow the packed sample order."""

    color: np.ndarray
    opacity: np.ndarray
    depth: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.opacity.size

    def composite(self, background) -> np.ndarray:
        """Color over a solid background."""
        return self.color + (1.0 - self.opacity)[:, None] * np.asarray(background, dtype=np.float64)

    @classmethod
    def concatenate(cls, parts) -> "RenderOutput":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("color", "opacity", "depth", "weights")))


def _rowsum(x):
    # sequential along each row, so trailing padding never changes the result bits
    if x.shape[1] == 0:
        return np.zeros((x.shape[0],) + x.shape[2:])
    return np.cumsum(x, axis=1)[:, -1]


def _composite(sigma, rgb, t0, t1, counts):
    """Shared compositing rule. Accumulation runs left to right within each ray."""
    delta = t1 - t0
    alpha = 1.0 - np.exp(-sigma * delta)
    alpha_2d, mask = padded(alpha, counts)
    trans = np.ones_like(alpha_2d)
    if alpha_2d.shape[1] > 1:
        np.cumprod(1.0 - alpha_2d[:, :-1], axis=1, out=trans[:, 1:])
    w_2d = np.where(mask, trans * alpha_2d, 0.0)
    weights = w_2d[mask]

    n_rays = counts.size
    width = w_2d.shape[1]
    mid = 0.5 * (t0 + t1)
    rgb_2d = np.zeros((n_rays, width, 3))
    rgb_2d[mask] = rgb
    mid_2d, _ = padded(mid, counts)
    opacity = _rowsum(w_2d)
    color = _rowsum(w_2d[..., None] * rgb_2d)
    weighted_depth = _rowsum(w_2d * mid_2d)
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(opacity > 0, weighted_depth / opacity, 0.0)
    return RenderOutput(color, opacity, depth, weights)


def render(samples: PackedSamples, rays, field: DensityField) -> RenderOutput:
    """Composite packed samples, querying density and color at interval midpoints."""
    bundle = as_bundle(rays)
    if samples.n_rays != len(bundle):
        raise ValueError(f"samples cover {samples.n_rays} rays but {len(bundle)} rays were given")
    same_ray = samples.ray_id[1:] == samples.ray_id[:-1]
    if np.any(samples.t1 <= samples.t0) or np.any(same_ray & (samples.t0[1:] < samples.t1[:-1])):
        raise OverlapError("intervals within a ray must be non-empty, ascending and non-overlapping")
    pts = bundle.points(samples.midpoints, samples.ray_id)
    sigma, rgb = field._rgb_density(pts)
    return _composite(sigma, rgb, samples.t0, samples.t1, samples.counts)


def _quadrature(sub: RayBundle, field: DensityField, n_quad: int) -> RenderOutput:
    s = np.arange(n_quad + 1) / n_quad
    edges = sub.t_near[:, None] + (sub.t_far - sub.t_near)[:, None] * s
    t0, t1 = edges[:, :-1].ravel(), edges[:, 1:].ravel()
    sigma, rgb = field._rgb_density(sub.points(0.5 * (edges[:, :-1] + edges[:, 1:])))
    return _composite(sigma.ravel(), rgb.reshape(-1, 3), t0, t1, np.full(len(sub), n_quad))


def oracle_render_bundle(rays, field: DensityField, n_quad: int, chunk_points: int = 1 << 20) -> RenderOutput:
    """Reference render: `n_quad` equal intervals over each ray's full range.

    Per-sample weights are discarded to bound memory.
    """
    n_quad = check_positive_int(n_quad, "n_quad")
    bundle = as_bundle(rays)
    rows = max(1, chunk_points // n_quad)
    parts = []
    for lo in range(0, len(bundle), rows):
        out = _quadrature(bundle[lo:lo + rows], field, n_quad)
        out.weights = np.zeros(0)
        parts.append(out)
    if not parts:
        return RenderOutput(np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0))
    return RenderOutput.concatenate(parts)


def oracle_render(ray: Ray, field: DensityField, n_quad: int) -> RenderOutput:
    """Single-ray reference with per-sample weights kept."""
    return _quadrature(as_bundle(ray), field, check_positive_int(n_quad, "n_quad"))


def psnr(image_a, image_b) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical images give PSNR_MAX."""
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_MAX
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_MAX))
