"""Sample, filter, render and refresh the estimator, in that order."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int
from .estimator import TransmittanceEstimator, UniformEstimator
from .field import DensityField
from .geometry import as_bundle
from .render import RenderOutput, render
from .sampler import PackedSamples, SamplerConfig, filter_by_transmittance, sample

__all__ = ["RenderResult", "render_rays", "PipelineState", "step", "VolumeRenderer"]


@dataclass
class RenderResult:
    output: RenderOutput
    samples_before_filter: int
    samples_after_filter: int
    samples: Optional[PackedSamples] = None

    @property
    def n_rays(self) -> int:
        return len(self.output)

    @property
    def mean_samples_before(self) -> float:
        return self.samples_before_filter / max(self.n_rays, 1)

    @property
    def mean_samples_after(self) -> float:
        return self.samples_after_filter / max(self.n_rays, 1)


def render_rays(rays, estimator: TransmittanceEstimator, field: DensityField, config: SamplerConfig,
                threads: int = 1, chunk_size: int = 4096, keep_samples: bool = False) -> RenderResult:
    """Sample, filter and render a batch of rays with a frozen estimator.

    Rays are processed in chunks, optionally on a thread pool. Each ray's random
    stream is keyed by its global index, so output bits do not depend on the
    chunking or the number of threads.
    """
    bundle = as_bundle(rays)
    threads = check_positive_int(threads, "threads")
    chunk_size = check_positive_int(chunk_size, "chunk_size")
    bounds = list(range(0, len(bundle), chunk_size)) or [0]

    def work(lo):
        sub = bundle[lo:lo + chunk_size]
        packed = sample(sub, estimator, config, first_ray=lo)
        kept = filter_by_transmittance(packed, sub, field, config.filter_threshold)
        return RenderResult(render(kept, sub, field), len(packed), len(kept), kept if keep_samples else None)

    if threads == 1 or len(bounds) == 1:
        parts = [work(lo) for lo in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    samples = None
    if keep_samples:
        samples = _concat_samples([p.samples for p in parts])
    return RenderResult(
        RenderOutput.concatenate([p.output for p in parts]),
        sum(p.samples_before_filter for p in parts),
        sum(p.samples_after_filter for p in parts),
        samples,
    )


def _concat_samples(parts) -> PackedSamples:
    counts = np.concatenate([p.counts for p in parts])
    return PackedSamples.from_counts(np.concatenate([p.t0 for p in parts]),
                                     np.concatenate([p.t1 for p in parts]), counts)


@dataclass
class PipelineState:
    """Estimator plus everything `step` needs. `step_count` is k."""

    estimator: TransmittanceEstimator
    config: SamplerConfig
    field: DensityField
    update_field: Optional[DensityField] = None
    update_every: int = 16
    update_seed: int = 0
    step_count: int = 0
    n_updates: int = 0
    _rng: np.random.Generator = dc_field(default=None, repr=False)

    def __post_init__(self):
        check_positive_int(self.update_every, "update_every")
        if self.update_field is None:
            self.update_field = self.field
        self._rng = np.random.default_rng(self.update_seed)

    @property
    def updatable(self) -> bool:
        return hasattr(self.estimator, "partial_fit")


def step(state: PipelineState, rays) -> RenderOutput:
    """One iteration: sample, filter, render, then every n-th step refresh the estimator."""
    bundle = as_bundle(rays)
    packed = sample(bundle, state.estimator, state.config)
    kept = filter_by_transmittance(packed, bundle, state.field, state.config.filter_threshold)
    out = render(kept, bundle, state.field)
    if state.updatable and state.step_count % state.update_every == state.update_every - 1:
        state.estimator.partial_fit(state.update_field, state._rng)
        state.n_updates += 1
    state.step_count += 1
    return out


class VolumeRenderer(BaseEstimator):
    """Estimator-backed renderer with a scikit-learn surface.

    `fit(field)` fits the transmittance estimator against the scene and
    `predict(rays)` returns premultiplied RGB per ray. Nested parameters are
    reachable through ``set_params(estimator__threshold=...)``.
    """

    def __init__(self, estimator=None, n_samples=64, stratified=True, filter_threshold=1e-4, seed=0,
                 threads=1, chunk_size=4096):
        self.estimator = estimator
        self.n_samples = n_samples
        self.stratified = stratified
        self.filter_threshold = filter_threshold
        self.seed = seed
        self.threads = threads
        self.chunk_size = chunk_size

    @property
    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.n_samples, self.stratified, self.filter_threshold, self.seed)

    def fit(self, field: DensityField):
        self.sampler_config  # validates
        self.estimator_ = self.estimator if self.estimator is not None else UniformEstimator()
        self.estimator_.fit(field)
        self.field_ = field
        return self

    def render(self, rays, keep_samples=False) -> RenderResult:
        check_is_fitted(self)
        return render_rays(rays, self.estimator_, self.field_, self.sampler_config,
                           threads=self.threads, chunk_size=self.chunk_size, keep_samples=keep_samples)

    def predict(self, rays) -> np.ndarray:
        return self.render(rays).output.color
