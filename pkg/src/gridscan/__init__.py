"""One-shot structured-light scanning on synthetic data.

Pipeline: coded grid pattern -> simulated capture with noise/roll
augmentation -> grid-graph detection and wrapped-phase estimation ->
correspondence refinement over the pattern adjacency -> line-anchored
phase correction and unwrapping -> dense triangulation and metrics.
"""

from ._accel import BACKEND, USE_NUMBA
from .graphext import (
    DetectedGraph,
    DetectorParams,
    EpipolarPrior,
    GraphNode,
    WrappedPhaseMaps,
    detect_graph,
    estimate_period,
    estimate_wrapped_phase,
    ingest_external,
)
from .mrf import Labeling, brute_force_map, energy, icm_refine, vote_refine
from .pattern import GridPattern, PatternAdjacency, adjacency, generate_pattern, rasterize_pattern
from .recon import MetricsReport, PointCloud, evaluate, export_ply, triangulate
from .simulator import (
    AugmentConfig,
    HeightfieldScene,
    MeshScene,
    PinholeModel,
    PlaneScene,
    SceneCapture,
    augment,
    generate_dataset,
    render_capture,
)
from .unwrap import (
    CorrectionMap,
    CorrespondenceMap,
    LineSampleSet,
    apply_correction,
    densify_correction,
    fit_line_curves,
    sample_corrections,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "BACKEND",
    "CorrectionMap",
    "CorrespondenceMap",
    "DetectedGraph",
    "DetectorParams",
    "EpipolarPrior",
    "GraphNode",
    "GridPattern",
    "HeightfieldScene",
    "Labeling",
    "LineSampleSet",
    "MeshScene",
    "MetricsReport",
    "PatternAdjacency",
    "PinholeModel",
    "PlaneScene",
    "PointCloud",
    "SceneCapture",
    "USE_NUMBA",
    "WrappedPhaseMaps",
    "adjacency",
    "apply_correction",
    "augment",
    "brute_force_map",
    "densify_correction",
    "detect_graph",
    "energy",
    "estimate_period",
    "estimate_wrapped_phase",
    "evaluate",
    "export_ply",
    "fit_line_curves",
    "generate_dataset",
    "generate_pattern",
    "icm_refine",
    "ingest_external",
    "rasterize_pattern",
    "render_capture",
    "sample_corrections",
    "triangulate",
    "vote_refine",
]
