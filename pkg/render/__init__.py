"""体渲染模块"""
from .volume_renderer import (
    RenderOutput,
    StreetRender,
    RenderSettings,
    composite_weights,
    integrate_ray,
    render_ground,
    render_sky,
    blend,
    super_resolve,
    render_street,
    random_crop_window,
    render_satellite,
    crop_image,
    downsample_image,
    downsample_mask,
)

__all__ = [
    'RenderOutput', 'StreetRender', 'RenderSettings',
    'composite_weights', 'integrate_ray', 'render_ground', 'render_sky', 'blend',
    'super_resolve', 'render_street', 'random_crop_window', 'render_satellite',
    'crop_image', 'downsample_image', 'downsample_mask',
]
