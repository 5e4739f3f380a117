"""Importance sampling from transmittance profiles into packed interval samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Sequence, Union

import numpy as np

from ._validation import check_positive_int, check_scalar_in
from .estimator import ProfileBatch, TransmittanceEstimator, TransmittanceProfile
from .field import DensityField
from .geometry import as_bundle

__all__ = [
    "SampleInterval",
    "PackedSamples",
    "SamplerConfig",
    "ray_rng",
    "invert_cdf",
    "inverse_transform_sample",
    "sample",
    "sample_profiles",
    "filter_by_transmittance",
    "padded",
]


class SampleInterval(NamedTuple):
    t0: float
    t1: float
    ray_id: int


class PackedSamples:
    """Interval samples of many rays, concatenated.

    ``ray_index[i] = (start, count)`` locates ray i's intervals in the flat
    ``t0``/``t1``/``ray_id`` arrays. Within a ray intervals ascend in t and do
    not overlap.
    """

    def __init__(self, t0, t1, ray_id, ray_index):
        self.t0 = np.asarray(t0, dtype=np.float64)
        self.t1 = np.asarray(t1, dtype=np.float64)
        self.ray_id = np.asarray(ray_id, dtype=np.int64)
        self.ray_index = np.asarray(ray_index, dtype=np.int64).reshape(-1, 2)

    @classmethod
    def from_counts(cls, t0, t1, counts) -> "PackedSamples":
        counts = np.asarray(counts, dtype=np.int64)
        starts = np.zeros_like(counts)
        if counts.size:
            np.cumsum(counts[:-1], out=starts[1:])
        ray_id = np.repeat(np.arange(counts.size, dtype=np.int64), counts)
        return cls(t0, t1, ray_id, np.stack([starts, counts], axis=1))

    @classmethod
    def pack(cls, per_ray: Sequence[Sequence[SampleInterval]]) -> "PackedSamples":
        """Pack per-ray lists of intervals; list position is the ray id."""
        counts = [len(items) for items in per_ray]
        flat = [iv for items in per_ray for iv in items]
        for rid, items in enumerate(per_ray):
            if any(iv.ray_id != rid for iv in items):
                raise ValueError(f"interval list {rid} holds samples of another ray")
        t0 = np.array([iv.t0 for iv in flat], dtype=np.float64)
        t1 = np.array([iv.t1 for iv in flat], dtype=np.float64)
        return cls.from_counts(t0, t1, counts)

    def unpack(self) -> List[List[SampleInterval]]:
        return [
            [SampleInterval(float(self.t0[k]), float(self.t1[k]), int(self.ray_id[k]))
             for k in range(start, start + count)]
            for start, count in self.ray_index
        ]

    @property
    def n_rays(self) -> int:
        return self.ray_index.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return self.ray_index[:, 1]

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.t0 + self.t1)

    @property
    def widths(self) -> np.ndarray:
        return self.t1 - self.t0

    def __len__(self) -> int:
        return self.t0.size

    def __iter__(self):
        for k in range(len(self)):
            yield SampleInterval(float(self.t0[k]), float(self.t1[k]), int(self.ray_id[k]))

    def ray(self, i) -> "PackedSamples":
        """Ray i's intervals as a one-ray batch (its id becomes 0)."""
        start, count = self.ray_index[i]
        sl = slice(start, start + count)
        return PackedSamples.from_counts(self.t0[sl], self.t1[sl], [count])

    def select(self, keep: np.ndarray) -> "PackedSamples":
        """Keep a subset of intervals and re-pack; survivors stay in order."""
        keep = np.asarray(keep, dtype=bool)
        counts = np.bincount(self.ray_id[keep], minlength=self.n_rays)
        return PackedSamples.from_counts(self.t0[keep], self.t1[keep], counts)

    def check(self) -> None:
        """Raise ValueError if any packing invariant is broken."""
        starts, counts = self.ray_index[:, 0], self.ray_index[:, 1]
        if np.any(counts < 0) or counts.sum() != len(self):
            raise ValueError("counts do not add up to the number of intervals")
        expected = np.zeros_like(starts)
        if counts.size:
            np.cumsum(counts[:-1], out=expected[1:])
        if not np.array_equal(starts, expected):
            raise ValueError("starts are not the prefix sums of counts")
        if not np.array_equal(self.ray_id, np.repeat(np.arange(self.n_rays), counts)):
            raise ValueError("ray ids disagree with the ray index")
        if np.any(self.t1 <= self.t0):
            raise ValueError("every interval needs t0 < t1")
        same_ray = self.ray_id[1:] == self.ray_id[:-1]
        if np.any(same_ray & (self.t0[1:] < self.t1[:-1])):
            raise ValueError("intervals overlap or are out of order within a ray")

    def to_csv_rows(self):
        for k in range(len(self)):
            yield int(self.ray_id[k]), repr(float(self.t0[k])), repr(float(self.t1[k]))

    def __eq__(self, other):
        if not isinstance(other, PackedSamples):
            return NotImplemented
        return (np.array_equal(self.t0, other.t0) and np.array_equal(self.t1, other.t1)
                and np.array_equal(self.ray_id, other.ray_id)
                and np.array_equal(self.ray_index, other.ray_index))

    def __repr__(self):
        return f"PackedSamples(n_rays={self.n_rays}, n_samples={len(self)})"


@dataclass(frozen=True)
class SamplerConfig:
    """Per-ray sample budget and randomness.

    With ``perturb=False`` stratified draws sit at stratum centers.
    """

    n_samples: int = 64
    stratified: bool = True
    filter_threshold: float = 1e-4
    seed: int = 0
    perturb: bool = True

    def __post_init__(self):
        check_positive_int(self.n_samples, "n_samples")
        check_scalar_in(self.filter_threshold, "filter_threshold", 0.0, 1.0, include_high=False)
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


def ray_rng(seed: int, ray_id: int) -> np.random.Generator:
    """Counter-based stream that depends only on (seed, ray_id)."""
    return np.random.Generator(np.random.Philox(key=(int(ray_id) << 64) | int(seed)))


def _draw_u(n, stratified, perturb, rng):
    if stratified:
        xi = rng.random(n) if perturb else np.full(n, 0.5)
        return (np.arange(n) + xi) / n
    return np.sort(rng.random(n))


def padded(values, counts, fill=0.0):
    """Scatter flat per-ray values into a ``(n_rays, max_count)`` array plus mask."""
    counts = np.asarray(counts, dtype=np.intp)
    width = int(counts.max()) if counts.size else 0
    mask = np.arange(width)[None, :] < counts[:, None]
    out = np.full((counts.size, width), fill, dtype=np.result_type(values, fill))
    out[mask] = values
    return out, mask


def _segmented_search(values, lo, hi, query):
    """First index j in [lo, hi) with values[j] >= query, per query; hi if none.

    `values` must be non-decreasing on each [lo, hi) range. Plain vectorized
    bisection so rays never see each other's data.
    """
    lo = lo.copy()
    hi = hi.copy()
    while True:
        active = lo < hi
        if not active.any():
            return lo
        mid = (lo + hi) // 2
        probe = np.where(active, values[np.minimum(mid, values.size - 1)], np.inf)
        go_right = active & (probe < query)
        lo = np.where(go_right, mid + 1, lo)
        hi = np.where(active & ~go_right, mid, hi)


def _invert(batch: ProfileBatch, ray_of_u, u):
    """Solve F(t) = u * F(t_exit) on each ray's profile.

    Returns ``(t, seg)`` where `seg` is the flat index of the left breakpoint
    of the segment each sample fell in. Only segments where F strictly rises
    can be selected.
    """
    F = 1.0 - batch.transmittance
    start = batch.offsets[ray_of_u]
    end = batch.offsets[ray_of_u + 1]
    target = u * F[end - 1]
    j = _segmented_search(F, start + 1, end, target)
    # target == 0 must land on the first rising segment, not on a flat lead-in
    zero = target <= F[start]
    if zero.any():
        j_zero = _segmented_search(F, start + 1, end, np.nextafter(F[start], np.inf))
        j = np.where(zero, j_zero, j)
    j = np.minimum(j, end - 1)
    seg = j - 1
    F0, F1 = F[seg], F[j]
    b0, b1 = batch.breakpoints[seg], batch.breakpoints[j]
    frac = np.clip((target - F0) / (F1 - F0), 0.0, 1.0)
    t = np.clip(b0 + frac * (b1 - b0), b0, b1)
    return t, seg


def invert_cdf(profile: TransmittanceProfile, u) -> np.ndarray:
    """Map uniform variates in [0, 1] through the profile's normalized inverse CDF."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if profile.total_opacity <= 0:
        return np.zeros(0)
    batch = ProfileBatch.from_profiles([profile])
    t, _ = _invert(batch, np.zeros(u.size, dtype=np.intp), u)
    return t


def inverse_transform_sample(profile: TransmittanceProfile, n: int, stratified: bool, rng,
                             perturb: bool = True) -> np.ndarray:
    """Draw up to `n` ascending depths distributed like the profile's weights."""
    check_positive_int(n, "n")
    if profile.total_opacity <= 0:
        return np.zeros(0)
    u = _draw_u(n, stratified, perturb, np.random.default_rng(rng))
    return invert_cdf(profile, u)


def _support_components(batch: ProfileBatch):
    """Label maximal runs of rising segments; returns (component id per segment, lo, hi)."""
    F = 1.0 - batch.transmittance
    n_pts = F.size
    rising = np.zeros(n_pts, dtype=bool)
    rising[:-1] = F[1:] > F[:-1]
    rising[batch.offsets[1:] - 1] = False
    begins = rising.copy()
    begins[1:] &= ~rising[:-1]
    comp = np.cumsum(begins) - 1
    ends = rising.copy()
    ends[:-1] &= ~rising[1:]
    comp_lo = batch.breakpoints[np.flatnonzero(begins)]
    comp_hi = batch.breakpoints[np.flatnonzero(ends) + 1]
    return comp, comp_lo, comp_hi


def _fence(t, seg, ray_of_u, batch):
    """Midpoint fencing inside each run of rising segments.

    Interior boundaries sit halfway between neighbouring samples; the outer
    boundaries of a run are the run's own ends, so intervals never reach
    into flat (skipped) parts of the profile.
    """
    comp, comp_lo, comp_hi = _support_components(batch)
    c = comp[seg]
    same_next = np.zeros(t.size, dtype=bool)
    same_next[:-1] = (c[1:] == c[:-1]) & (ray_of_u[1:] == ray_of_u[:-1])
    mids = np.empty(t.size)
    mids[:-1] = 0.5 * (t[1:] + t[:-1])
    t1 = np.where(same_next, mids, comp_hi[c])
    same_prev = np.zeros(t.size, dtype=bool)
    same_prev[1:] = same_next[:-1]
    prev_mid = np.empty(t.size)
    prev_mid[1:] = mids[:-1]
    t0 = np.where(same_prev, prev_mid, comp_lo[c])
    return t0, t1


def sample_profiles(batch: ProfileBatch, counts, config: SamplerConfig, first_ray: int = 0) -> PackedSamples:
    """Draw ``counts[i]`` samples on profile i and fence them into intervals.

    Profile i uses the random stream of ray ``first_ray + i``.
    """
    counts = np.where(batch.total_opacity > 0, np.asarray(counts, dtype=np.intp), 0)
    u_parts = []
    for i in np.flatnonzero(counts):
        u_parts.append(_draw_u(int(counts[i]), config.stratified, config.perturb, ray_rng(config.seed, first_ray + i)))
    if not u_parts:
        return PackedSamples.from_counts(np.zeros(0), np.zeros(0), np.zeros(len(batch), dtype=np.intp))
    u = np.concatenate(u_parts)
    ray_of_u = np.repeat(np.arange(len(batch)), counts)
    t, seg = _invert(batch, ray_of_u, u)
    t0, t1 = _fence(t, seg, ray_of_u, batch)
    keep = t1 > t0
    kept_counts = np.bincount(ray_of_u[keep], minlength=len(batch))
    return PackedSamples.from_counts(t0[keep], t1[keep], kept_counts)


def sample(rays, estimator: TransmittanceEstimator, config: SamplerConfig, first_ray: int = 0) -> PackedSamples:
    """Estimate, invert and pack: one call for a batch of rays.

    `first_ray` offsets the random-stream keys when `rays` is a slice of a
    larger batch.
    """
    bundle = as_bundle(rays)
    if len(bundle) == 0:
        raise ValueError("sample needs at least one ray")
    batch = estimator.estimate_batch(bundle)
    counts = estimator.sample_budget(batch, config.n_samples)
    return sample_profiles(batch, counts, config, first_ray)


DensityFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def interval_density(samples: PackedSamples, rays, density_fn: Union[DensityField, DensityFn]):
    """Density at every interval midpoint.

    `density_fn` is a field, or a callable ``(t0, t1, ray_id) -> sigma``.
    """
    if isinstance(density_fn, DensityField):
        bundle = as_bundle(rays)
        pts = bundle.points(samples.midpoints, samples.ray_id)
        return density_fn._density(pts)
    return np.asarray(density_fn(samples.t0, samples.t1, samples.ray_id), dtype=np.float64)


def entering_transmittance(samples: PackedSamples, sigma) -> np.ndarray:
    """T before each interval: prod of exp(-sigma * width) over earlier intervals of its ray."""
    depth, mask = padded(sigma * samples.widths, samples.counts)
    excl = np.zeros_like(depth)
    if depth.shape[1] > 1:
        np.cumsum(depth[:, :-1], axis=1, out=excl[:, 1:])
    return np.exp(-excl[mask])


def filter_by_transmittance(samples: PackedSamples, rays, density_fn, threshold: float = 1e-4) -> PackedSamples:
    """Drop intervals whose entering transmittance is below `threshold`."""
    if threshold <= 0 or len(samples) == 0:
        return samples
    sigma = interval_density(samples, rays, density_fn)
    keep = entering_transmittance(samples, sigma) >= threshold
    return samples.select(keep)
