"""场景几何模块"""
from .cameras import (
    NORTH_AXIS,
    UP_AXIS,
    WorldFrame,
    PanoramaCamera,
    SatelliteOrthoCamera,
    RayBundle,
    stack_bundles,
    panorama_azimuth,
    panorama_elevation,
    panorama_rays,
    satellite_pixel_centers,
    satellite_rays,
    world_to_normalized,
    frame_from_config,
    satellite_camera_from_config,
    panorama_camera_from_config,
)

__all__ = [
    'NORTH_AXIS', 'UP_AXIS',
    'WorldFrame', 'PanoramaCamera', 'SatelliteOrthoCamera', 'RayBundle',
    'stack_bundles', 'panorama_azimuth', 'panorama_elevation', 'panorama_rays',
    'satellite_pixel_centers', 'satellite_rays', 'world_to_normalized',
    'frame_from_config', 'satellite_camera_from_config', 'panorama_camera_from_config',
]
