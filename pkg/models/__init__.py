"""网络模块：三平面生成、光照映射、解码器、天空生成、超分、判别器"""
from .triplane import (
    TriPlane,
    PointFeature,
    TriPlaneGenerator,
    split_planes,
    query_points,
    texel_center,
    generate_triplane,
)
from .illumination import (
    N_BINS,
    FEATURE_DIM,
    STYLE_DIM,
    IlluminationFeature,
    StyleVector,
    IlluminationMapper,
    binarize_mask,
    extract_illumination,
    map_illumination,
    null_style,
    sample_training_illumination,
)
from .decoder import FieldSample, FieldDecoder, decode, decode_batch
from .sky_generator import ModulatedConv2d, SkyGenerator
from .super_resolution import SuperResolver
from .discriminator import Discriminator, Discriminators

__all__ = [
    'TriPlane', 'PointFeature', 'TriPlaneGenerator', 'split_planes', 'query_points',
    'texel_center', 'generate_triplane',
    'N_BINS', 'FEATURE_DIM', 'STYLE_DIM', 'IlluminationFeature', 'StyleVector',
    'IlluminationMapper', 'binarize_mask', 'extract_illumination', 'map_illumination',
    'null_style', 'sample_training_illumination',
    'FieldSample', 'FieldDecoder', 'decode', 'decode_batch',
    'ModulatedConv2d', 'SkyGenerator', 'SuperResolver', 'Discriminator', 'Discriminators',
]
