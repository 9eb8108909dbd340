"""合成方块场景（训练样本与几何真值）"""
from .box_scene import (
    GROUND_Z,
    Box,
    BoxScene,
    rasterize_satellite,
    raytrace_panorama,
    random_box_scene,
    make_synthetic_dataset,
)

__all__ = [
    'GROUND_Z', 'Box', 'BoxScene', 'rasterize_satellite', 'raytrace_panorama',
    'random_box_scene', 'make_synthetic_dataset',
]
