"""Transmittance estimators.

Every estimator turns a ray into a piecewise-linear transmittance profile
T(t). The CDF of the volume-rendering weights is ``F(t) = 1 - T(t)``, so a
profile is all the sampler needs for importance sampling. Estimators follow
the scikit-learn conventions: constructor arguments are hyperparameters,
``fit(field)`` builds state, fitted attributes carry a trailing underscore.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int, check_scalar_in
from .field import DensityField, VoxelField, bake, load_voxel_field, save_voxel_field
from .geometry import (
    Aabb,
    MappingKind,
    Ray,
    RayBundle,
    as_bundle,
    intersect_aabb,
)

__all__ = [
    "TransmittanceProfile",
    "ProfileBatch",
    "TransmittanceEstimator",
    "UniformEstimator",
    "OccupancyGrid",
    "PdfEstimator",
    "CombinedEstimator",
    "estimate",
    "estimate_combined",
    "traverse",
    "update_ema",
    "binarize",
    "save_grid",
    "load_grid",
]


@dataclass(frozen=True)
class TransmittanceProfile:
    """T(t) sampled at ascending breakpoints, linear in between.

    The CDF is never stored; use :attr:`cdf` which is ``1 - transmittance``.
    """

    breakpoints: np.ndarray
    transmittance: np.ndarray

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=np.float64)
        T = np.array(self.transmittance, dtype=np.float64)
        if b.ndim != 1 or b.shape != T.shape or b.size < 2:
            raise ValueError("need matching 1-D breakpoints and transmittance of length >= 2")
        if not np.all(np.isfinite(b)) or not np.all(np.diff(b) > 0):
            raise ValueError("breakpoints must be finite and strictly ascending")
        if T[0] != 1.0:
            raise ValueError(f"transmittance must start at exactly 1, got {T[0]!r}")
        if np.any(T < 0) or np.any(T > 1) or np.any(np.diff(T) > 1e-12):
            raise ValueError("transmittance must be non-increasing within [0, 1]")
        b.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "transmittance", T)

    @classmethod
    def trivial(cls, t_near, t_far) -> "TransmittanceProfile":
        """Fully transparent profile: nothing to sample."""
        return cls(np.array([t_near, t_far]), np.ones(2))

    @property
    def t_enter(self) -> float:
        return float(self.breakpoints[0])

    @property
    def t_exit(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def cdf(self) -> np.ndarray:
        return 1.0 - self.transmittance

    @property
    def total_opacity(self) -> float:
        return float(1.0 - self.transmittance[-1])

    def __call__(self, t):
        return np.interp(t, self.breakpoints, self.transmittance)

    def __len__(self):
        return self.breakpoints.size


class ProfileBatch:
    """Profiles for many rays stored back to back.

    ``offsets[i]:offsets[i + 1]`` slices ray i's breakpoints.
    """

    def __init__(self, breakpoints, transmittance, offsets):
        self.breakpoints = np.asarray(breakpoints, dtype=np.float64)
        self.transmittance = np.asarray(transmittance, dtype=np.float64)
        self.offsets = np.asarray(offsets, dtype=np.intp)

    @classmethod
    def from_profiles(cls, profiles: Sequence[TransmittanceProfile]) -> "ProfileBatch":
        sizes = [len(p) for p in profiles]
        offsets = np.zeros(len(profiles) + 1, dtype=np.intp)
        np.cumsum(sizes, out=offsets[1:])
        if not profiles:
            return cls(np.zeros(0), np.zeros(0), offsets)
        return cls(
            np.concatenate([p.breakpoints for p in profiles]),
            np.concatenate([p.transmittance for p in profiles]),
            offsets,
        )

    @classmethod
    def from_dense(cls, breakpoints, transmittance) -> "ProfileBatch":
        """Batch where every ray has the same number of breakpoints (rows)."""
        n, m = breakpoints.shape
        return cls(breakpoints.ravel(), transmittance.ravel(), np.arange(n + 1) * m)

    def __len__(self):
        return self.offsets.size - 1

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def total_opacity(self) -> np.ndarray:
        return 1.0 - self.transmittance[self.offsets[1:] - 1]

    def __getitem__(self, i) -> TransmittanceProfile:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return TransmittanceProfile(self.breakpoints[lo:hi], self.transmittance[lo:hi])

    def __iter__(self):
        return (self[i] for i in range(len(self)))


class TransmittanceEstimator(BaseEstimator):
    """Common surface for all estimators."""

    def fit(self, field: Optional[DensityField] = None):
        return self

    def estimate(self, rays):
        """Profile for a single `Ray`, or a list of profiles for many rays."""
        check_is_fitted(self)
        batch = self.estimate_batch(as_bundle(rays))
        if isinstance(rays, Ray):
            return batch[0]
        return list(batch)

    def estimate_batch(self, bundle: RayBundle) -> ProfileBatch:
        raise NotImplementedError

    def sample_budget(self, batch: ProfileBatch, n_samples: int) -> np.ndarray:
        """Samples to draw on each ray given a per-ray budget of `n_samples`."""
        return np.full(len(batch), n_samples, dtype=np.intp)


class UniformEstimator(TransmittanceEstimator):
    """Linear T from 1 at t_near to 0 at t_far: a constant PDF."""

    def __sklearn_is_fitted__(self):
        return True

    def estimate_batch(self, bundle):
        b = np.stack([bundle.t_near, bundle.t_far], axis=1)
        T = np.tile([1.0, 0.0], (len(bundle), 1))
        return ProfileBatch.from_dense(b, T)


def _uniform_knots(mapping_kind, t_lo, t_hi, n):
    """(rows, n + 1) breakpoints spread evenly in the mapping's s-space."""
    s = np.arange(n + 1) / n
    if MappingKind(mapping_kind) is MappingKind.IDENTITY:
        knots = t_lo[:, None] + (t_hi - t_lo)[:, None] * s
    else:
        inv = (1.0 - s) / t_lo[:, None] + s / t_hi[:, None]
        knots = 1.0 / inv
    knots[:, 0] = t_lo
    knots[:, -1] = t_hi
    return knots


def _exp_transmittance(sigma_left, knots):
    """T at knots from left-endpoint densities: exp(-sum_{j<i} sigma_j * delta_j)."""
    depth = sigma_left * np.diff(knots, axis=-1)
    T = np.ones(knots.shape)
    T[..., 1:] = np.exp(-np.cumsum(depth, axis=-1))
    return T


class PdfEstimator(TransmittanceEstimator):
    """Exponential transmittance from a coarse density source.

    The source stands in for a proposal network: either a field given
    directly, or the scene baked at ``coarse_resolution`` during `fit`.
    Density is read at the left end of each of ``n_coarse`` segments.

    Parameters
    ----------
    source : DensityField, optional
        Coarse field. When None, `fit` bakes the field it is given.
    n_coarse : int
        Segments per ray; profiles get ``n_coarse + 1`` breakpoints.
    coarse_resolution : int
        Voxels per axis when baking.
    bounds : Aabb, optional
        Bake region; defaults to the field's own bounds.
    mapping : {"identity", "reciprocal_depth"}
        Spacing of breakpoints along the ray.
    """

    def __init__(self, source=None, n_coarse=64, coarse_resolution=32, bounds=None, mapping="identity"):
        self.source = source
        self.n_coarse = n_coarse
        self.coarse_resolution = coarse_resolution
        self.bounds = bounds
        self.mapping = mapping

    def fit(self, field=None):
        check_positive_int(self.n_coarse, "n_coarse", 1)
        MappingKind(self.mapping)
        if self.source is not None:
            self.source_ = self.source
        else:
            if field is None:
                raise ValueError("PdfEstimator.fit needs a field when no source is set")
            bounds = self.bounds if self.bounds is not None else field.bounds
            if bounds is None:
                raise ValueError("field has no bounds; pass bounds= to bake a coarse source")
            check_positive_int(self.coarse_resolution, "coarse_resolution", 2)
            self.source_ = bake(field, self.coarse_resolution, bounds, colors=False)
        return self

    def _domain(self, bundle):
        if self.source_.bounds is None:
            return bundle.t_near.copy(), bundle.t_far.copy(), np.ones(len(bundle), dtype=bool)
        return intersect_aabb(bundle, self.source_.bounds)

    def _profile_rows(self, bundle, t_lo, t_hi):
        knots = _uniform_knots(self.mapping, t_lo, t_hi, self.n_coarse)
        pts = bundle.points(knots[:, :-1])
        sigma = self.source_._density(pts)
        return knots, _exp_transmittance(sigma, knots)

    def estimate_batch(self, bundle):
        check_is_fitted(self)
        t_lo, t_hi, hit = self._domain(bundle)
        knots, T = self._profile_rows(bundle[hit] if not hit.all() else bundle, t_lo[hit], t_hi[hit])
        if hit.all():
            return ProfileBatch.from_dense(knots, T)
        profiles = []
        rows = iter(zip(knots, T))
        for i in range(len(bundle)):
            if hit[i]:
                b, t = next(rows)
                profiles.append(TransmittanceProfile(b, t))
            else:
                profiles.append(TransmittanceProfile.trivial(bundle.t_near[i], bundle.t_far[i]))
        return ProfileBatch.from_profiles(profiles)


class OccupancyGrid(TransmittanceEstimator):
    """Binary occupancy over an L^3 grid, refreshed by an exponential moving average.

    Parameters
    ----------
    resolution : int
        Cells per axis (L).
    bounds : Aabb, optional
        Grid region; defaults to the field's bounds at `fit`, else [-1, 1]^3.
    threshold : float
        A cell is occupied when its cached density is strictly above this.
    ema_decay : float
        Weight kept from the previous cached value on each update.
    march_step : float, optional
        Sample spacing inside occupied space. A ray with occupied length ``l``
        draws ``min(N, ceil(l / march_step))`` samples. Defaults to the grid
        diagonal over 1024.
    warmup_steps : int
        EMA updates run by `fit`, starting from an all-zero cache.
    jitter : float
        Fraction of a cell over which update positions are jittered; 0 queries
        cell centers exactly.
    seed : int
        Seeds the jitter stream used by `fit`.
    """

    def __init__(self, resolution=64, bounds=None, threshold=0.01, ema_decay=0.95, march_step=None,
                 warmup_steps=16, jitter=1.0, seed=0):
        self.resolution = resolution
        self.bounds = bounds
        self.threshold = threshold
        self.ema_decay = ema_decay
        self.march_step = march_step
        self.warmup_steps = warmup_steps
        self.jitter = jitter
        self.seed = seed

    def reset(self, bounds: Optional[Aabb] = None):
        """Allocate a cold (all-zero) cache without querying any field."""
        L = check_positive_int(self.resolution, "resolution")
        check_scalar_in(self.threshold, "threshold", 0.0)
        check_scalar_in(self.ema_decay, "ema_decay", 0.0, 1.0, include_high=False)
        check_scalar_in(self.jitter, "jitter", 0.0, 1.0)
        box = bounds if bounds is not None else self.bounds
        self.bounds_ = box if box is not None else Aabb.cube(1.0)
        if self.march_step is None:
            self.march_step_ = self.bounds_.diagonal / 1024
        else:
            self.march_step_ = check_scalar_in(self.march_step, "march_step", 0.0, include_low=False)
        self.cached_density_ = np.zeros((L, L, L))
        self.occupancy_bits_ = np.zeros((L, L, L), dtype=bool)
        self.n_updates_ = 0
        return self

    def fit(self, field: DensityField):
        self.reset(self.bounds if self.bounds is not None else field.bounds)
        rng = np.random.default_rng(self.seed)
        for _ in range(check_positive_int(self.warmup_steps, "warmup_steps", 0)):
            update_ema(self, field, rng)
        return self

    def partial_fit(self, field: DensityField, rng=None):
        """One EMA update; allocates the grid first if needed."""
        if not hasattr(self, "cached_density_"):
            self.reset(self.bounds if self.bounds is not None else field.bounds)
        update_ema(self, field, np.random.default_rng(rng))
        return self

    @property
    def cell_size(self) -> np.ndarray:
        return self.bounds_.size / self.resolution

    def cell_centers(self) -> np.ndarray:
        """Centers shaped ``(L, L, L, 3)``, indexed ``[z, y, x]``."""
        L = self.resolution
        axes = [self.bounds_.min[a] + (np.arange(L) + 0.5) * self.cell_size[a] for a in range(3)]
        z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def cell_index(self, x) -> np.ndarray:
        """Nearest-cell lookup; returns integer xyz indices clipped to the grid."""
        idx = np.floor((np.asarray(x) - self.bounds_.min) / self.cell_size).astype(np.intp)
        return np.clip(idx, 0, self.resolution - 1)

    def is_occupied(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        idx = self.cell_index(x)
        bits = self.occupancy_bits_[idx[..., 2], idx[..., 1], idx[..., 0]]
        return bits & self.bounds_.contains(x)

    @property
    def occupied_fraction(self) -> float:
        return float(self.occupancy_bits_.mean())

    def traverse_batch(self, bundle: RayBundle) -> List[np.ndarray]:
        """Occupied spans per ray as ``(k, 2)`` arrays of (t_start, t_end).

        Spans are found exactly by splitting each ray at every cell plane it
        crosses, so each piece lies in a single cell.
        """
        check_is_fitted(self)
        n = len(bundle)
        if n == 0:
            return []
        L = self.resolution
        t_enter, t_exit, hit = intersect_aabb(bundle, self.bounds_)
        t_enter = np.where(hit, t_enter, bundle.t_near)
        t_exit = np.where(hit, t_exit, bundle.t_near)
        cuts = [t_enter[:, None]]
        with np.errstate(divide="ignore", invalid="ignore"):
            for a in range(3):
                planes = self.bounds_.min[a] + self.cell_size[a] * np.arange(L + 1)
                cuts.append((planes[None, :] - bundle.origins[:, a, None]) / bundle.directions[:, a, None])
        cuts.append(t_exit[:, None])
        t = np.concatenate(cuts, axis=1)
        inside = (t > t_enter[:, None]) & (t < t_exit[:, None])
        t = np.where(inside, t, t_exit[:, None])
        t[:, 0] = t_enter
        t.sort(axis=1)

        lo, hi = t[:, :-1], t[:, 1:]
        valid = (hi > lo) & hit[:, None]
        mid = 0.5 * (lo + hi)
        idx = self.cell_index(bundle.origins[:, None, :] + mid[..., None] * bundle.directions[:, None, :])
        occ = self.occupancy_bits_[idx[..., 2], idx[..., 1], idx[..., 0]] & valid
        # zero-length pieces inherit the previous piece so they never split a span
        cols = np.where(valid, np.arange(valid.shape[1]), 0)
        np.maximum.accumulate(cols, axis=1, out=cols)
        occ = np.take_along_axis(occ, cols, axis=1)

        prev = np.zeros_like(occ)
        prev[:, 1:] = occ[:, :-1]
        nxt = np.zeros_like(occ)
        nxt[:, :-1] = occ[:, 1:]
        starts_r, starts_c = np.nonzero(occ & ~prev)
        ends_r, ends_c = np.nonzero(occ & ~nxt)
        span_lo = lo[starts_r, starts_c]
        span_hi = hi[ends_r, ends_c]
        counts = np.bincount(starts_r, minlength=n)
        split = np.cumsum(counts)[:-1]
        return [np.stack(p, axis=1) for p in zip(np.split(span_lo, split), np.split(span_hi, split))]

    def estimate_batch(self, bundle):
        spans_per_ray = self.traverse_batch(bundle)
        t_enter, t_exit, hit = intersect_aabb(bundle, self.bounds_)
        profiles = []
        for i, spans in enumerate(spans_per_ray):
            if len(spans) == 0:
                profiles.append(TransmittanceProfile.trivial(bundle.t_near[i], bundle.t_far[i]))
                continue
            lengths = spans[:, 1] - spans[:, 0]
            before = np.concatenate([[0.0], np.cumsum(lengths)])
            total = before[-1]
            b = np.empty(2 * len(spans) + 2)
            T = np.empty_like(b)
            b[0], b[-1] = t_enter[i], t_exit[i]
            b[1:-1] = spans.ravel()
            T[0], T[-1] = 1.0, 0.0
            T[1:-1:2] = 1.0 - before[:-1] / total
            T[2:-1:2] = 1.0 - before[1:] / total
            T[-2] = 0.0
            keep = np.concatenate([[True], np.diff(b) > 0])
            profiles.append(TransmittanceProfile(b[keep], T[keep]))
        return ProfileBatch.from_profiles(profiles)

    def sample_budget(self, batch, n_samples):
        seg_T = np.diff(batch.transmittance)
        seg_len = np.diff(batch.breakpoints)
        ray_of_seg = np.repeat(np.arange(len(batch)), batch.sizes)[:-1]
        occupied = np.where(seg_T < 0, seg_len, 0.0)
        # segments straddling two rays are dropped by masking the last point of each ray
        last = np.zeros(batch.breakpoints.size, dtype=bool)
        last[batch.offsets[1:] - 1] = True
        occupied = np.where(last[:-1], 0.0, occupied)
        length = np.bincount(ray_of_seg, weights=occupied, minlength=len(batch))
        return np.minimum(n_samples, np.ceil(length / self.march_step_ - 1e-9)).astype(np.intp)


class CombinedEstimator(TransmittanceEstimator):
    """Occupancy grid restricts each ray; the PDF source refines inside occupied spans.

    ``pdf.n_coarse`` segments are shared among a ray's spans in proportion to
    span length, at least one per span. T is held constant across the gaps.
    """

    def __init__(self, grid: OccupancyGrid, pdf: PdfEstimator):
        self.grid = grid
        self.pdf = pdf

    def fit(self, field):
        self.grid.fit(field)
        self.pdf.fit(field)
        return self

    def partial_fit(self, field, rng=None):
        self.grid.partial_fit(field, rng)
        return self

    def __sklearn_is_fitted__(self):
        return hasattr(self.grid, "cached_density_") and hasattr(self.pdf, "source_")

    def estimate_batch(self, bundle):
        check_is_fitted(self)
        spans_per_ray = self.grid.traverse_batch(bundle)
        n_coarse = self.pdf.n_coarse
        profiles = []
        for i, spans in enumerate(spans_per_ray):
            if len(spans) == 0:
                profiles.append(TransmittanceProfile.trivial(bundle.t_near[i], bundle.t_far[i]))
                continue
            alloc = _allocate(spans[:, 1] - spans[:, 0], n_coarse)
            knots, sigma = [], []
            for (lo, hi), k in zip(spans, alloc):
                kn = _uniform_knots(self.pdf.mapping, np.array([lo]), np.array([hi]), k)[0]
                knots.append(kn)
                pts = bundle.origins[i] + kn[:-1, None] * bundle.directions[i]
                sigma.append(self.pdf.source_._density(pts))
            b, T = _chain_spans(knots, sigma)
            profiles.append(TransmittanceProfile(b, T))
        return ProfileBatch.from_profiles(profiles)


def _allocate(lengths, n_total):
    """Largest-remainder split of `n_total` segments, at least one per span."""
    k = len(lengths)
    if n_total <= k:
        return np.ones(k, dtype=int)
    share = lengths / lengths.sum() * (n_total - k)
    base = np.floor(share).astype(int)
    remainder = n_total - k - base.sum()
    order = np.argsort(-(share - base), kind="stable")
    base[order[:remainder]] += 1
    return base + 1


def _chain_spans(knots, sigma):
    """Concatenate per-span exp profiles, carrying T across the gaps."""
    b_parts, T_parts = [], []
    depth = 0.0
    for kn, s in zip(knots, sigma):
        seg = s * np.diff(kn)
        cum = depth + np.concatenate([[0.0], np.cumsum(seg)])
        b_parts.append(kn)
        T_parts.append(np.exp(-cum))
        depth = cum[-1]
    b = np.concatenate(b_parts)
    T = np.concatenate(T_parts)
    T[0] = 1.0
    return b, T


def estimate(estimator: TransmittanceEstimator, ray: Ray) -> TransmittanceProfile:
    return estimator.estimate(ray)


def estimate_combined(comb: CombinedEstimator, ray: Ray) -> TransmittanceProfile:
    return comb.estimate(ray)


def traverse(grid: OccupancyGrid, ray: Ray) -> List[tuple]:
    spans = grid.traverse_batch(as_bundle(ray))[0]
    return [(float(a), float(b)) for a, b in spans]


def update_ema(grid: OccupancyGrid, field: DensityField, rng) -> None:
    """cached <- decay * cached + (1 - decay) * sigma(jittered cell point), then binarize."""
    check_is_fitted(grid)
    L = grid.resolution
    x = grid.cell_centers()
    if grid.jitter > 0:
        offsets = np.random.default_rng(rng).random((L, L, L, 3)) - 0.5
        x = x + offsets * grid.jitter * grid.cell_size
    sigma = field._density(x)
    gamma = grid.ema_decay
    grid.cached_density_ = gamma * grid.cached_density_ + (1.0 - gamma) * sigma
    grid.n_updates_ += 1
    binarize(grid)


def binarize(grid: OccupancyGrid) -> None:
    grid.occupancy_bits_ = grid.cached_density_ > grid.threshold


def save_grid(grid: OccupancyGrid, path) -> Path:
    """Write cached densities as `.vox3` plus a JSON sidecar with the scalar state.

    Returns the sidecar path. The cache is stored in float32.
    """
    check_is_fitted(grid)
    path = Path(path)
    save_voxel_field(VoxelField(grid.cached_density_, grid.bounds_), path)
    sidecar = path.with_suffix(".json")
    state = {
        "threshold": grid.threshold,
        "ema_decay": grid.ema_decay,
        "march_step": grid.march_step_,
        "n_updates": grid.n_updates_,
        "jitter": grid.jitter,
        "seed": grid.seed,
    }
    sidecar.write_text(json.dumps(state, indent=2))
    return sidecar


def load_grid(path) -> OccupancyGrid:
    path = Path(path)
    vox = load_voxel_field(path)
    nx, ny, nz = vox.resolution
    if not nx == ny == nz:
        raise ValueError(f"occupancy grids are cubic, file has resolution {vox.resolution}")
    state = json.loads(path.with_suffix(".json").read_text())
    grid = OccupancyGrid(resolution=nx, bounds=vox.bounds, threshold=state["threshold"],
                         ema_decay=state["ema_decay"], march_step=state["march_step"],
                         jitter=state.get("jitter", 1.0), seed=state.get("seed", 0))
    grid.reset()
    grid.cached_density_ = vox.densities.astype(np.float64)
    grid.n_updates_ = int(state["n_updates"])
    binarize(grid)
    return grid
