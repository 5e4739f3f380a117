import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from volsample import (Aabb, CompositeScene, ConstantBox, OccupancyGrid, PackedSamples, PdfEstimator, Ray,
                       RayBundle, SampleInterval, SamplerConfig, TransmittanceProfile, UniformEstimator,
                       filter_by_transmittance, inverse_transform_sample, invert_cdf, sample)
from volsample.estimator import ProfileBatch
from volsample.sampler import ray_rng, sample_profiles

from conftest import UNIT, blob_scene, random_rays, sparse_scene

PROFILE = TransmittanceProfile(np.array([0.0, 1.0, 2.0, 3.0, 5.0]), np.array([1.0, 0.8, 0.8, 0.3, 0.1]))


def _normalized_cdf(profile):
    F = profile.cdf / profile.total_opacity
    return lambda t: np.interp(t, profile.breakpoints, F)


def test_invert_cdf_hits_knots():
    F = PROFILE.cdf / PROFILE.total_opacity
    t = invert_cdf(PROFILE, F)
    # F is flat on [1, 2]; u at that level maps to the end of the rising segment before it
    np.testing.assert_allclose(t, [0.0, 1.0, 1.0, 3.0, 5.0], atol=1e-12)


def test_ks_against_profile():
    t = inverse_transform_sample(PROFILE, 20000, stratified=False, rng=7)
    assert stats.kstest(t, _normalized_cdf(PROFILE)).statistic < 0.015
    assert not np.any((t > 1.0) & (t < 2.0))


def test_stratified_one_per_stratum():
    n = 50
    t = inverse_transform_sample(PROFILE, n, stratified=True, rng=3)
    u = _normalized_cdf(PROFILE)(t)
    np.testing.assert_array_equal(np.floor(u * n).clip(max=n - 1), np.arange(n))


def test_zero_opacity_profile_yields_nothing():
    p = TransmittanceProfile.trivial(0.0, 1.0)
    assert inverse_transform_sample(p, 8, True, 0).size == 0


def test_cdf_integral_matches_opacity():
    # integrating the piecewise-constant density of F recovers F(t_exit)
    b = PROFILE.breakpoints
    slope = np.diff(PROFILE.cdf) / np.diff(b)
    pdf = lambda t: slope[min(np.searchsorted(b, t, side="right") - 1, slope.size - 1)]
    total = integrate.quad(pdf, b[0], b[-1], points=b[1:-1], epsabs=1e-13)[0]
    assert total == pytest.approx(PROFILE.total_opacity, abs=1e-9)


def test_ray_rng_is_counter_based():
    a = ray_rng(5, 10).random(4)
    np.testing.assert_array_equal(a, ray_rng(5, 10).random(4))
    assert not np.array_equal(a, ray_rng(5, 11).random(4))
    assert not np.array_equal(a, ray_rng(6, 10).random(4))


def test_sample_intervals_are_valid(rng):
    rays = random_rays(rng, 300)
    for est in (UniformEstimator(), PdfEstimator(n_coarse=32).fit(blob_scene()),
                OccupancyGrid(resolution=32).fit(sparse_scene())):
        packed = sample(rays, est, SamplerConfig(n_samples=24, seed=1))
        packed.check()
        assert packed.n_rays == len(rays)
        assert np.all(packed.t0 >= rays.t_near[packed.ray_id])
        assert np.all(packed.t1 <= rays.t_far[packed.ray_id])
        assert packed.counts.max() <= 24


def test_uniform_intervals_tile_the_ray():
    rays = RayBundle.from_rays([Ray((0, 0, 0), (0, 0, 1.0), 1.0, 3.0)])
    packed = sample(rays, UniformEstimator(), SamplerConfig(n_samples=8, perturb=False))
    np.testing.assert_allclose(packed.t0, 1.0 + 0.25 * np.arange(8))
    assert packed.t0[0] == 1.0 and packed.t1[-1] == 3.0


def test_occupancy_intervals_stay_in_occupied_space(rng):
    grid = OccupancyGrid(resolution=32, threshold=0.5, jitter=0.0, warmup_steps=4).fit(sparse_scene())
    rays = random_rays(rng, 400)
    packed = sample(rays, grid, SamplerConfig(n_samples=32))
    pts = rays.points(packed.midpoints, packed.ray_id)
    assert np.all(grid.is_occupied(pts))
    # interval ends also stay inside occupied spans, never bridging a gap
    for rid in range(0, len(rays), 17):
        spans = grid.traverse_batch(rays[rid:rid + 1])[0]
        one = packed.ray(rid)
        for a, b in zip(one.t0, one.t1):
            assert any(lo - 1e-12 <= a and b <= hi + 1e-12 for lo, hi in spans)


def test_sample_is_chunk_invariant(rng):
    rays = random_rays(rng, 50)
    est = PdfEstimator(n_coarse=16).fit(blob_scene())
    cfg = SamplerConfig(n_samples=16, seed=9)
    whole = sample(rays, est, cfg)
    parts = [sample(rays[lo:lo + 7], est, cfg, first_ray=lo) for lo in range(0, 50, 7)]
    np.testing.assert_array_equal(whole.t0, np.concatenate([p.t0 for p in parts]))
    np.testing.assert_array_equal(whole.t1, np.concatenate([p.t1 for p in parts]))


def test_sample_profiles_respects_counts():
    batch = ProfileBatch.from_profiles([PROFILE, TransmittanceProfile.trivial(0, 1), PROFILE])
    packed = sample_profiles(batch, [4, 9, 0], SamplerConfig())
    assert packed.counts.tolist() == [4, 0, 0]


def test_filter_drops_only_occluded():
    wall = CompositeScene([ConstantBox(1000.0, Aabb((-1, -1, -0.1), (1, 1, 0.1)))], bounds=UNIT)
    rays = RayBundle.from_rays([Ray((0, 0, -3.0), (0, 0, 1.0), 0.0, 6.0)])
    packed = sample(rays, UniformEstimator(), SamplerConfig(n_samples=600, perturb=False))
    kept = filter_by_transmittance(packed, rays, wall, 1e-4)
    assert kept.t1.max() <= 3.1 + 1e-9 and len(kept) < len(packed)
    assert filter_by_transmittance(packed, rays, wall, 0.0) is packed


def test_filter_accepts_callable():
    packed = PackedSamples.from_counts([0.0, 1.0, 2.0], [1.0, 2.0, 3.0], [3])
    kept = filter_by_transmittance(packed, None, lambda t0, t1, rid: np.full(t0.size, 5.0), 1e-4)
    # entering T: 1, e^-5, e^-10
    assert kept.t0.tolist() == [0.0, 1.0]


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(n_samples=0)
    with pytest.raises(ValueError):
        SamplerConfig(filter_threshold=1.5)


@st.composite
def per_ray_lists(draw):
    n_rays = draw(st.integers(0, 12))
    out = []
    for rid in range(n_rays):
        cuts = sorted(set(draw(st.lists(st.floats(0, 100, allow_nan=False), max_size=12))))
        out.append([SampleInterval(a, b, rid) for a, b in zip(cuts[:-1], cuts[1:])])
    return out


@settings(max_examples=200, deadline=None)
@given(per_ray_lists())
def test_pack_unpack_round_trip(per_ray):
    packed = PackedSamples.pack(per_ray)
    packed.check()
    assert packed.unpack() == per_ray
    for rid, items in enumerate(per_ray):
        assert packed.ray(rid).unpack() == [[iv._replace(ray_id=0) for iv in items]]


def test_pack_rejects_foreign_ids():
    with pytest.raises(ValueError):
        PackedSamples.pack([[SampleInterval(0.0, 1.0, 1)]])


def test_check_catches_overlap():
    bad = PackedSamples.from_counts([0.0, 0.5], [1.0, 2.0], [2])
    with pytest.raises(ValueError):
        bad.check()
