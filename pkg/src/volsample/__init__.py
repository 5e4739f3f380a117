"""Importance sampling for volume rendering through transmittance estimators."""

from .estimator import (
    CombinedEstimator,
    OccupancyGrid,
    PdfEstimator,
    ProfileBatch,
    TransmittanceEstimator,
    TransmittanceProfile,
    UniformEstimator,
    binarize,
    estimate,
    estimate_combined,
    load_grid,
    save_grid,
    traverse,
    update_ema,
)
from .field import (
    CompositeScene,
    ConstantBox,
    DensityField,
    GaussianBlob,
    Sphere,
    VoxelField,
    bake,
    load_field,
    load_scene,
    load_voxel_field,
    query_density,
    query_rgb_density,
    save_scene,
    save_voxel_field,
)
from .geometry import Aabb, ContractionMapping, MappingKind, Ray, RayBundle, contract, ray_aabb_intersect, uncontract
from .pipeline import PipelineState, RenderResult, VolumeRenderer, render_rays, step
from .render import RenderOutput, oracle_render, oracle_render_bundle, psnr, render
from .sampler import (
    PackedSamples,
    SampleInterval,
    SamplerConfig,
    filter_by_transmittance,
    inverse_transform_sample,
    invert_cdf,
    sample,
)
from ._validation import FormatError

__version__ = "0.1.0"

__all__ = [
    "CombinedEstimator",
    "OccupancyGrid",
    "PdfEstimator",
    "ProfileBatch",
    "TransmittanceEstimator",
    "TransmittanceProfile",
    "UniformEstimator",
    "binarize",
    "estimate",
    "estimate_combined",
    "load_grid",
    "save_grid",
    "traverse",
    "update_ema",
    "CompositeScene",
    "ConstantBox",
    "DensityField",
    "GaussianBlob",
    "Sphere",
    "VoxelField",
    "bake",
    "load_field",
    "load_scene",
    "load_voxel_field",
    "query_density",
    "query_rgb_density",
    "save_scene",
    "save_voxel_field",
    "PackedSamples",
    "SampleInterval",
    "SamplerConfig",
    "filter_by_transmittance",
    "inverse_transform_sample",
    "invert_cdf",
    "sample",
    "Aabb",
    "ContractionMapping",
    "MappingKind",
    "Ray",
    "RayBundle",
    "contract",
    "ray_aabb_intersect",
    "uncontract",
    "PipelineState",
    "RenderResult",
    "VolumeRenderer",
    "render_rays",
    "step",
    "RenderOutput",
    "oracle_render",
    "oracle_render_bundle",
    "psnr",
    "render",
    "FormatError",
]
