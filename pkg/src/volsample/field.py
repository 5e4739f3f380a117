"""Density and radiance fields: analytic primitives and a trilinear voxel grid.

Every field answers vectorized queries. Positions have shape ``(..., 3)``,
densities come back with shape ``(...)`` and colors with ``(..., 3)``.
Densities are in inverse world-length units.
"""

from __future__ import annotations

import json
import struct
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from ._validation import FormatError, check_positions, check_vector3
from .geometry import Aabb

__all__ = [
    "DensityField",
    "ConstantBox",
    "Sphere",
    "GaussianBlob",
    "CompositeScene",
    "VoxelField",
    "query_density",
    "query_rgb_density",
    "bake",
    "save_voxel_field",
    "load_voxel_field",
    "scene_from_dict",
    "scene_to_dict",
    "load_scene",
    "save_scene",
    "load_field",
]


class DensityField(ABC):
    """Queryable sigma(x), with an optional color c(x).

    Subclasses implement `_density` and `_rgb_density` on pre-validated float
    arrays. `bounds` is the region outside which the field is known to be
    empty, or None when there is no such region.
    """

    bounds: Optional[Aabb] = None

    def density(self, x) -> np.ndarray:
        return self._density(check_positions(x))

    def rgb_density(self, x, d=None) -> Tuple[np.ndarray, np.ndarray]:
        # view direction is accepted for interface parity; no field here is view dependent
        return self._rgb_density(check_positions(x))

    @abstractmethod
    def _density(self, x: np.ndarray) -> np.ndarray:
        ...

    def _rgb_density(self, x):
        sigma = self._density(x)
        rgb = np.broadcast_to(self._color(), sigma.shape + (3,))
        return sigma, np.where(sigma[..., None] > 0, rgb, 0.0)

    def _color(self):
        return np.ones(3)


def query_density(field: DensityField, x):
    sigma = field.density(x)
    return float(sigma) if np.ndim(sigma) == 0 else sigma


def query_rgb_density(field: DensityField, x, d=None):
    sigma, rgb = field.rgb_density(x, d)
    if np.ndim(sigma) == 0:
        return float(sigma), np.asarray(rgb, dtype=np.float64)
    return sigma, rgb


def _check_color(color):
    rgb = check_vector3(color, "color")
    if np.any(rgb < 0) or np.any(rgb > 1):
        raise ValueError(f"color components must lie in [0, 1], got {rgb}")
    return rgb


def _check_sigma(sigma):
    sigma = float(sigma)
    if not (sigma >= 0 and np.isfinite(sigma)):
        raise ValueError(f"density must be finite and >= 0, got {sigma}")
    return sigma


class _Primitive(DensityField):
    def __init__(self, sigma, color):
        self.sigma = _check_sigma(sigma)
        self.color = _check_color(color)

    def _color(self):
        return self.color

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.to_dict().items() if k != "type")
        return f"{type(self).__name__}({params})"


class ConstantBox(_Primitive):
    def __init__(self, sigma=1.0, box: Aabb = None, color=(1.0, 1.0, 1.0)):
        super().__init__(sigma, color)
        self.box = Aabb.cube(1.0) if box is None else box
        self.bounds = self.box

    def _density(self, x):
        inside = np.all((x >= self.box.min) & (x <= self.box.max), axis=-1)
        return np.where(inside, self.sigma, 0.0)

    def to_dict(self):
        return {"type": "box", "density": self.sigma, "min": self.box.min.tolist(),
                "max": self.box.max.tolist(), "color": self.color.tolist()}


class Sphere(_Primitive):
    """Hard-edged ball of constant density."""

    def __init__(self, sigma=1.0, center=(0.0, 0.0, 0.0), radius=0.5, color=(1.0, 1.0, 1.0)):
        super().__init__(sigma, color)
        self.center = check_vector3(center, "center")
        self.radius = float(radius)
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        self.bounds = Aabb(self.center - self.radius, self.center + self.radius)

    def _density(self, x):
        d2 = np.sum((x - self.center) ** 2, axis=-1)
        return np.where(d2 <= self.radius**2, self.sigma, 0.0)

    def to_dict(self):
        return {"type": "sphere", "density": self.sigma, "center": self.center.tolist(),
                "radius": self.radius, "color": self.color.tolist()}


class GaussianBlob(_Primitive):
    """sigma(x) = peak * exp(-|x - mean|^2 / (2 width^2)); unbounded support."""

    def __init__(self, sigma=1.0, mean=(0.0, 0.0, 0.0), width=0.25, color=(1.0, 1.0, 1.0)):
        super().__init__(sigma, color)
        self.mean = check_vector3(mean, "mean")
        self.width = float(width)
        if not self.width > 0:
            raise ValueError("width must be positive")

    def _density(self, x):
        d2 = np.sum((x - self.mean) ** 2, axis=-1)
        return self.sigma * np.exp(-d2 / (2.0 * self.width**2))

    def to_dict(self):
        return {"type": "gaussian", "density": self.sigma, "mean": self.mean.tolist(),
                "width": self.width, "color": self.color.tolist()}


class CompositeScene(DensityField):
    """Max-combination of primitives.

    Density is the pointwise maximum; color comes from the primitive holding
    that maximum (the first one on ties).
    """

    def __init__(self, primitives: Sequence[DensityField], bounds: Optional[Aabb] = None):
        self.primitives = list(primitives)
        if not self.primitives and bounds is None:
            raise ValueError("an empty scene needs explicit bounds")
        self.bounds = bounds if bounds is not None else self._union_bounds()

    def _union_bounds(self):
        boxes = [p.bounds for p in self.primitives]
        if any(b is None for b in boxes):
            return None
        return Aabb(np.min([b.min for b in boxes], axis=0), np.max([b.max for b in boxes], axis=0))

    def _density(self, x):
        if not self.primitives:
            return np.zeros(np.shape(x)[:-1])
        return np.max([p._density(x) for p in self.primitives], axis=0)

    def _rgb_density(self, x):
        if not self.primitives:
            return np.zeros(np.shape(x)[:-1]), np.zeros(np.shape(x))
        sigmas = np.stack([p._density(x) for p in self.primitives])
        best = np.argmax(sigmas, axis=0)
        sigma = np.take_along_axis(sigmas, best[None], axis=0)[0]
        colors = np.stack([p._color() for p in self.primitives])
        rgb = colors[best]
        return sigma, np.where(sigma[..., None] > 0, rgb, 0.0)

    def __repr__(self):
        return f"CompositeScene({self.primitives!r})"


class VoxelField(DensityField):
    """Densities (and optional colors) stored at cell centers of a regular grid.

    Arrays are indexed ``[z, y, x]`` so that C-order flattening is x-fastest.
    Values are kept in float32, matching the on-disk format exactly.
    Between cell centers values are trilinear; between the outermost centers
    and the bounds they are held constant; outside the bounds density is 0.
    """

    def __init__(self, densities, bounds: Aabb, colors=None):
        densities = np.ascontiguousarray(densities, dtype=np.float32)
        if densities.ndim != 3 or min(densities.shape) < 1:
            raise ValueError(f"densities must be a 3-D array, got shape {densities.shape}")
        if not np.all(np.isfinite(densities)) or np.any(densities < 0):
            raise ValueError("densities must be finite and non-negative")
        if colors is not None:
            colors = np.ascontiguousarray(colors, dtype=np.float32)
            if colors.shape != densities.shape + (3,):
                raise ValueError(f"colors must have shape {densities.shape + (3,)}, got {colors.shape}")
        self.densities = densities
        self.colors = colors
        self.bounds = bounds

    @property
    def resolution(self) -> Tuple[int, int, int]:
        nz, ny, nx = self.densities.shape
        return nx, ny, nz

    @property
    def cell_size(self) -> np.ndarray:
        return self.bounds.size / np.array(self.resolution)

    def lattice_points(self) -> np.ndarray:
        """Cell centers, shaped like ``densities`` with a trailing xyz axis."""
        nx, ny, nz = self.resolution
        axes = [
            self.bounds.min[a] + (np.arange(n) + 0.5) * self.cell_size[a]
            for a, n in enumerate((nx, ny, nz))
        ]
        z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def _corners(self, x):
        res = np.array(self.resolution)
        u = (x - self.bounds.min) / self.cell_size - 0.5
        snapped = np.round(u)
        u = np.where(np.abs(u - snapped) < 1e-9, snapped, u)
        u = np.clip(u, 0.0, res - 1)
        i0 = np.minimum(np.floor(u).astype(np.intp), res - 1)
        i1 = np.minimum(i0 + 1, res - 1)
        w = u - i0
        return i0, i1, w

    def _interp(self, grid, i0, i1, w):
        # grid indexed [z, y, x, ...]; i*/w have xyz on the last axis
        out = 0.0
        for cz in (0, 1):
            iz = (i1 if cz else i0)[..., 2]
            wz = w[..., 2] if cz else 1.0 - w[..., 2]
            for cy in (0, 1):
                iy = (i1 if cy else i0)[..., 1]
                wy = w[..., 1] if cy else 1.0 - w[..., 1]
                for cx in (0, 1):
                    ix = (i1 if cx else i0)[..., 0]
                    wx = w[..., 0] if cx else 1.0 - w[..., 0]
                    weight = wz * wy * wx
                    value = grid[iz, iy, ix].astype(np.float64)
                    if value.ndim > weight.ndim:
                        weight = weight[..., None]
                    out = out + weight * value
        return out

    def _density(self, x):
        inside = np.all((x >= self.bounds.min) & (x <= self.bounds.max), axis=-1)
        i0, i1, w = self._corners(x)
        sigma = self._interp(self.densities, i0, i1, w)
        return np.where(inside, np.maximum(sigma, 0.0), 0.0)

    def _rgb_density(self, x):
        sigma = self._density(x)
        if self.colors is None:
            rgb = np.ones(sigma.shape + (3,))
        else:
            i0, i1, w = self._corners(x)
            rgb = np.clip(self._interp(self.colors, i0, i1, w), 0.0, 1.0)
        return sigma, np.where(sigma[..., None] > 0, rgb, 0.0)

    def __repr__(self):
        return f"VoxelField(resolution={self.resolution}, bounds={self.bounds.to_list()})"


def bake(field: DensityField, resolution, bounds: Aabb, colors: bool = True) -> VoxelField:
    """Sample `field` at the cell centers of a grid over `bounds`."""
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (3,))
    if np.any(res < 2):
        raise ValueError(f"bake needs resolution >= 2 per axis, got {tuple(res)}")
    shell = VoxelField(np.zeros(res[::-1], dtype=np.float32), bounds)
    points = shell.lattice_points()
    sigma, rgb = field._rgb_density(points)
    return VoxelField(sigma.astype(np.float32), bounds, rgb.astype(np.float32) if colors else None)


_MAGIC = b"VOX3"
_VERSION = 1
_HEADER = struct.Struct("<4sI3I6dI")
_FLAG_COLORS = 1


def save_voxel_field(field: VoxelField, path) -> None:
    nx, ny, nz = field.resolution
    flags = _FLAG_COLORS if field.colors is not None else 0
    header = _HEADER.pack(_MAGIC, _VERSION, nx, ny, nz, *field.bounds.to_list(), flags)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(field.densities.astype("<f4").tobytes(order="C"))
        if field.colors is not None:
            fh.write(field.colors.astype("<f4").tobytes(order="C"))


def load_voxel_field(path) -> VoxelField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"file too short for a header ({len(data)} bytes)", len(data))
    magic, version, nx, ny, nz, *rest = _HEADER.unpack_from(data)
    bounds, flags = rest[:6], rest[6]
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    for k, n in enumerate((nx, ny, nz)):
        if n < 1:
            raise FormatError("resolution must be positive", 8 + 4 * k)
    if flags & ~_FLAG_COLORS:
        raise FormatError(f"unknown flag bits {flags:#x}", 68)
    try:
        box = Aabb(bounds[:3], bounds[3:])
    except ValueError as exc:
        raise FormatError(f"invalid bounds: {exc}", 20) from None

    n_cells = nx * ny * nz
    offset = _HEADER.size
    expected = offset + 4 * n_cells * (4 if flags & _FLAG_COLORS else 1)
    if len(data) != expected:
        raise FormatError(
            f"payload size mismatch: header declares {n_cells} cells, expected {expected} bytes "
            f"total, found {len(data)}", min(len(data), expected))
    densities = np.frombuffer(data, dtype="<f4", count=n_cells, offset=offset)
    bad = np.flatnonzero(~np.isfinite(densities) | (densities < 0))
    if bad.size:
        raise FormatError(f"invalid density {densities[bad[0]]!r} at cell {bad[0]}", offset + 4 * int(bad[0]))
    colors = None
    if flags & _FLAG_COLORS:
        c_off = offset + 4 * n_cells
        colors = np.frombuffer(data, dtype="<f4", count=3 * n_cells, offset=c_off)
        bad = np.flatnonzero(~np.isfinite(colors))
        if bad.size:
            raise FormatError("non-finite color value", c_off + 4 * int(bad[0]))
        colors = colors.astype(np.float32).reshape(nz, ny, nx, 3)
    return VoxelField(densities.astype(np.float32).reshape(nz, ny, nx), box, colors)


_PRIMITIVES = {
    "box": lambda d: ConstantBox(d["density"], Aabb(d["min"], d["max"]), d.get("color", (1, 1, 1))),
    "sphere": lambda d: Sphere(d["density"], d["center"], d["radius"], d.get("color", (1, 1, 1))),
    "gaussian": lambda d: GaussianBlob(d["density"], d["mean"], d["width"], d.get("color", (1, 1, 1))),
}


def scene_from_dict(spec: dict) -> CompositeScene:
    """Build a scene from ``{"primitives": [...], "bounds": [6 floats]?}``."""
    items = spec.get("primitives")
    if not isinstance(items, list):
        raise ValueError("scene needs a 'primitives' list")
    prims = []
    for i, item in enumerate(items):
        kind = item.get("type")
        if kind not in _PRIMITIVES:
            raise ValueError(f"primitive {i}: unknown type {kind!r}; expected one of {sorted(_PRIMITIVES)}")
        try:
            prims.append(_PRIMITIVES[kind](item))
        except KeyError as exc:
            raise ValueError(f"primitive {i} ({kind}) is missing {exc}") from None
    bounds = spec.get("bounds")
    if bounds is not None and len(bounds) != 6:
        raise ValueError(f"scene bounds need 6 numbers (min xyz, max xyz), got {len(bounds)}")
    return CompositeScene(prims, Aabb(bounds[:3], bounds[3:]) if bounds is not None else None)


def scene_to_dict(scene: CompositeScene) -> dict:
    out = {"primitives": [p.to_dict() for p in scene.primitives]}
    if scene.bounds is not None:
        out["bounds"] = scene.bounds.to_list()
    return out


def load_scene(path) -> CompositeScene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def save_scene(scene: CompositeScene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)


def load_field(path) -> DensityField:
    """Load a `.vox3` grid or a JSON scene, chosen by file suffix."""
    path = Path(path)
    if path.suffix == ".vox3":
        return load_voxel_field(path)
    if path.suffix == ".json":
        return load_scene(path)
    raise ValueError(f"unrecognized scene file {path}; expected .json or .vox3")
