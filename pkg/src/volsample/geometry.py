"""Rays, axis-aligned boxes, slab intersection and depth contraction."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Tuple

import numpy as np

from ._validation import check_vector3

__all__ = [
    "Ray",
    "RayBundle",
    "Aabb",
    "MappingKind",
    "ContractionMapping",
    "ray_aabb_intersect",
    "intersect_aabb",
    "contract",
    "uncontract",
]


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float = 0.0
    t_far: float = 1.0

    def __post_init__(self):
        origin = check_vector3(self.origin, "origin")
        direction = check_vector3(self.direction, "direction")
        norm = float(np.linalg.norm(direction))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, got norm {norm!r}")
        t_near, t_far = float(self.t_near), float(self.t_far)
        if not (t_near >= 0.0 and math.isfinite(t_near)):
            raise ValueError(f"t_near must be finite and >= 0, got {t_near!r}")
        if not (t_far > t_near and math.isfinite(t_far)):
            raise ValueError(f"t_far must be finite and > t_near, got {t_far!r}")
        origin.setflags(write=False)
        direction.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "t_near", t_near)
        object.__setattr__(self, "t_far", t_far)

    @classmethod
    def toward(cls, origin, target, t_near=0.0, t_far=None) -> "Ray":
        """Ray from `origin` through `target`; `t_far` defaults to the target distance."""
        origin = np.asarray(origin, dtype=np.float64)
        delta = np.asarray(target, dtype=np.float64) - origin
        dist = float(np.linalg.norm(delta))
        return cls(origin, delta / dist, t_near, dist if t_far is None else t_far)

    def at(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


class RayBundle:
    """Structure-of-arrays batch of rays.

    All the heavy paths in the library operate on bundles; single `Ray`
    objects are converted with :meth:`from_rays`.
    """

    def __init__(self, origins, directions, t_near, t_far):
        origins = np.array(origins, dtype=np.float64, ndmin=2)
        directions = np.array(directions, dtype=np.float64, ndmin=2)
        n = origins.shape[0]
        if origins.shape != (n, 3) or directions.shape != (n, 3):
            raise ValueError("origins and directions must both have shape (n, 3)")
        t_near = np.broadcast_to(np.asarray(t_near, dtype=np.float64), (n,)).copy()
        t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (n,)).copy()
        if not (np.all(np.isfinite(origins)) and np.all(np.isfinite(directions))):
            raise ValueError("ray origins and directions must be finite")
        norms = np.linalg.norm(directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("ray directions must be unit length")
        if np.any(t_near < 0) or not np.all(t_far > t_near) or not np.all(np.isfinite(t_far)):
            raise ValueError("each ray needs 0 <= t_near < t_far < inf")
        self.origins = origins
        self.directions = directions
        self.t_near = t_near
        self.t_far = t_far
        for arr in (self.origins, self.directions, self.t_near, self.t_far):
            arr.setflags(write=False)

    @classmethod
    def from_rays(cls, rays: Iterable[Ray]) -> "RayBundle":
        rays = list(rays)
        if not rays:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.ones(0))
        return cls(
            np.stack([r.origin for r in rays]),
            np.stack([r.direction for r in rays]),
            np.array([r.t_near for r in rays]),
            np.array([r.t_far for r in rays]),
        )

    def __len__(self) -> int:
        return self.origins.shape[0]

    def __getitem__(self, i) -> "Ray | RayBundle":
        if isinstance(i, (int, np.integer)):
            return Ray(self.origins[i], self.directions[i], self.t_near[i], self.t_far[i])
        return RayBundle(self.origins[i], self.directions[i], self.t_near[i], self.t_far[i])

    def __iter__(self) -> Iterator[Ray]:
        for i in range(len(self)):
            yield self[i]

    def points(self, t, ray_ids=None) -> np.ndarray:
        """World positions ``o + t d``; `t` is per ray, or per `ray_ids` entry."""
        t = np.asarray(t, dtype=np.float64)
        if ray_ids is None:
            if t.ndim == 2:
                return self.origins[:, None, :] + t[..., None] * self.directions[:, None, :]
            return self.origins + t[:, None] * self.directions
        return self.origins[ray_ids] + t[:, None] * self.directions[ray_ids]


def as_bundle(rays) -> RayBundle:
    if isinstance(rays, RayBundle):
        return rays
    if isinstance(rays, Ray):
        return RayBundle.from_rays([rays])
    return RayBundle.from_rays(rays)


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = check_vector3(self.min, "min")
        hi = check_vector3(self.max, "max")
        if not np.all(lo < hi):
            raise ValueError(f"Aabb needs min < max component-wise, got {lo} and {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def cube(cls, half_extent=1.0, center=(0.0, 0.0, 0.0)) -> "Aabb":
        c = np.asarray(center, dtype=np.float64)
        return cls(c - half_extent, c + half_extent)

    @property
    def size(self) -> np.ndarray:
        return self.max - self.min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.size))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.all((x >= self.min) & (x <= self.max), axis=-1)

    def to_list(self) -> list:
        return [*map(float, self.min), *map(float, self.max)]

    def __eq__(self, other):
        if not isinstance(other, Aabb):
            return NotImplemented
        return bool(np.array_equal(self.min, other.min) and np.array_equal(self.max, other.max))

    def __hash__(self):
        return hash(tuple(self.to_list()))


def intersect_aabb(bundle: RayBundle, box: Aabb) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test for a bundle.

    Returns ``(t_enter, t_exit, hit)``; entries where ``hit`` is false are
    meaningless. The interval is already clipped to each ray's range.
    """
    d = bundle.directions
    parallel = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t_lo = (box.min - bundle.origins) * inv
        t_hi = (box.max - bundle.origins) * inv
    t_small = np.minimum(t_lo, t_hi)
    t_large = np.maximum(t_lo, t_hi)
    # rays parallel to a slab are inside it for all t or for none; faces count as inside
    in_slab = (bundle.origins >= box.min) & (bundle.origins <= box.max)
    t_small = np.where(parallel, np.where(in_slab, -np.inf, np.inf), t_small)
    t_large = np.where(parallel, np.where(in_slab, np.inf, -np.inf), t_large)
    t_enter = np.maximum(t_small.max(axis=1), bundle.t_near)
    t_exit = np.minimum(t_large.min(axis=1), bundle.t_far)
    hit = t_exit > t_enter
    return t_enter, t_exit, hit


def ray_aabb_intersect(ray: Ray, box: Aabb) -> Optional[Tuple[float, float]]:
    t_enter, t_exit, hit = intersect_aabb(RayBundle.from_rays([ray]), box)
    if not hit[0]:
        return None
    return float(t_enter[0]), float(t_exit[0])


class MappingKind(enum.Enum):
    IDENTITY = "identity"
    RECIPROCAL_DEPTH = "reciprocal_depth"


@dataclass(frozen=True)
class ContractionMapping:
    """Bijection between normalized s in [0, 1] and depth t in [t_near, t_far].

    ``RECIPROCAL_DEPTH`` is linear in inverse depth and accepts an infinite far
    bound, which sends s = 1 to t = inf.
    """

    kind: MappingKind = MappingKind.IDENTITY
    t_near: float = 0.0
    t_far: float = 1.0

    def __post_init__(self):
        kind = MappingKind(self.kind)
        object.__setattr__(self, "kind", kind)
        t_near, t_far = float(self.t_near), float(self.t_far)
        if not (t_far > t_near):
            raise ValueError("t_far must exceed t_near")
        if kind is MappingKind.IDENTITY and not math.isfinite(t_far):
            raise ValueError("identity mapping needs a finite t_far")
        if kind is MappingKind.RECIPROCAL_DEPTH and not t_near > 0:
            raise ValueError("reciprocal-depth mapping needs t_near > 0")
        object.__setattr__(self, "t_near", t_near)
        object.__setattr__(self, "t_far", t_far)

    def contract(self, s):
        return contract(self, s)

    def uncontract(self, t):
        return uncontract(self, t)


def _check_domain(x, lo, hi, name):
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(x)) or np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"{name} outside [{lo}, {hi}]")
    return x


def contract(mapping: ContractionMapping, s):
    """Map normalized s to depth t. Scalars in, scalars out."""
    s_arr = _check_domain(s, 0.0, 1.0, "s")
    n, f = mapping.t_near, mapping.t_far
    if mapping.kind is MappingKind.IDENTITY:
        t = n + s_arr * (f - n)
    else:
        inv_f = 0.0 if math.isinf(f) else 1.0 / f
        with np.errstate(divide="ignore"):
            t = 1.0 / ((1.0 - s_arr) / n + s_arr * inv_f)
        t = np.where(s_arr == 0.0, n, np.where(s_arr == 1.0, f, t))
    # rounding may step just outside [n, f]
    t = np.clip(t, n, f)
    return float(t) if np.ndim(s) == 0 else t


def uncontract(mapping: ContractionMapping, t):
    """Inverse of :func:`contract`."""
    t_arr = _check_domain(t, mapping.t_near, mapping.t_far, "t")
    n, f = mapping.t_near, mapping.t_far
    if mapping.kind is MappingKind.IDENTITY:
        s = np.clip((t_arr - n) / (f - n), 0.0, 1.0)
    else:
        inv_f = 0.0 if math.isinf(f) else 1.0 / f
        with np.errstate(divide="ignore"):
            s = (1.0 / n - 1.0 / t_arr) / (1.0 / n - inv_f)
        s = np.clip(s, 0.0, 1.0)
    return float(s) if np.ndim(t) == 0 else s
