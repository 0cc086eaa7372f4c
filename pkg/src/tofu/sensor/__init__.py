from .correlation import (
    EmitterConfig,
    NoiseConfig,
    apply_noise,
    correlate_closed_form,
    correlate_numerical,
    default_quantize_range,
    depth_to_phase,
    return_amplitude,
    simulate_correlations,
    unambiguous_range,
)
from .scene import (
    DEFAULT_GENERATOR,
    Box,
    Material,
    Plane,
    RenderedScene,
    SceneGenerator,
    SceneSpec,
    Sphere,
    default_calibration,
    render_scene,
    scene_from_dict,
)

__all__ = [
    "DEFAULT_GENERATOR",
    "Box",
    "EmitterConfig",
    "Material",
    "NoiseConfig",
    "Plane",
    "RenderedScene",
    "SceneGenerator",
    "SceneSpec",
    "Sphere",
    "apply_noise",
    "correlate_closed_form",
    "correlate_numerical",
    "default_calibration",
    "default_quantize_range",
    "depth_to_phase",
    "render_scene",
    "return_amplitude",
    "scene_from_dict",
    "simulate_correlations",
    "unambiguous_range",
]
