import numpy as np
import pytest
from sklearn.base import clone

from volsample import (OccupancyGrid, PdfEstimator, PipelineState, SamplerConfig, UniformEstimator,
                       VolumeRenderer, filter_by_transmittance, render, render_rays, sample, step)

from conftest import blob_rays, blob_scene, sparse_scene


def test_update_cadence():
    scene = sparse_scene()
    grid = OccupancyGrid(resolution=16).fit(scene)
    state = PipelineState(grid, SamplerConfig(n_samples=8), scene, update_every=16)
    rays = blob_rays(4)
    before = grid.n_updates_
    for _ in range(32):
        step(state, rays)
    assert state.step_count == 32 and state.n_updates == 2
    assert grid.n_updates_ == before + 2


def test_uniform_step_never_updates():
    state = PipelineState(UniformEstimator(), SamplerConfig(n_samples=8), blob_scene(), update_every=1)
    step(state, blob_rays(4))
    assert state.n_updates == 0 and state.step_count == 1


def test_step_equals_manual_composition():
    scene = blob_scene()
    est = PdfEstimator(n_coarse=16).fit(scene)
    cfg = SamplerConfig(n_samples=16, seed=4)
    rays = blob_rays(8)
    state = PipelineState(est, cfg, scene)
    out = step(state, rays)
    packed = filter_by_transmittance(sample(rays, est, cfg), rays, scene, cfg.filter_threshold)
    manual = render(packed, rays, scene)
    np.testing.assert_array_equal(out.color, manual.color)
    np.testing.assert_array_equal(out.weights, manual.weights)


@pytest.mark.parametrize("threads,chunk", [(1, 7), (4, 13), (3, 4096)])
def test_render_rays_bitwise_independent_of_chunking(threads, chunk):
    scene = sparse_scene()
    grid = OccupancyGrid(resolution=32).fit(scene)
    rays = blob_rays(16)
    cfg = SamplerConfig(n_samples=32, seed=2)
    ref = render_rays(rays, grid, scene, cfg, keep_samples=True)
    got = render_rays(rays, grid, scene, cfg, threads=threads, chunk_size=chunk, keep_samples=True)
    assert got.output.color.tobytes() == ref.output.color.tobytes()
    assert got.output.depth.tobytes() == ref.output.depth.tobytes()
    assert got.samples == ref.samples
    assert got.samples_after_filter == ref.samples_after_filter


def test_volume_renderer_estimator_api():
    scene = blob_scene()
    vr = VolumeRenderer(estimator=PdfEstimator(n_coarse=16), n_samples=16)
    assert vr.get_params()["estimator__n_coarse"] == 16
    rays = blob_rays(8)
    color = vr.fit(scene).predict(rays)
    assert color.shape == (64, 3)
    copy = clone(vr).set_params(n_samples=32)
    assert copy.n_samples == 32 and not hasattr(copy, "estimator_")
    default = VolumeRenderer(n_samples=8).fit(scene)
    assert isinstance(default.estimator_, UniformEstimator)
