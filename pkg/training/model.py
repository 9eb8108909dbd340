"""
模型组装
将三平面生成器、光照映射、解码器、天空生成器、超分模块按配置组装，
并提供训练与推理共用的风格向量选择、街景渲染与卫星渲染入口。
"""
from typing import Any, Dict, List, Optional, Sequence

import torch
import torch.nn as nn

from geometry.cameras import (
    PanoramaCamera,
    WorldFrame,
    frame_from_config,
    panorama_camera_from_config,
    satellite_camera_from_config,
)
from models.decoder import FieldDecoder
from models.discriminator import Discriminators
from models.illumination import (
    FEATURE_DIM,
    PROVENANCE_REAL,
    IlluminationFeature,
    IlluminationMapper,
    StyleVector,
    map_illumination,
    null_style,
    sample_training_illumination,
)
from models.sky_generator import SkyGenerator
from models.super_resolution import SuperResolver
from models.triplane import TriPlane, TriPlaneGenerator, generate_triplane
from render.volume_renderer import RenderOutput, RenderSettings, StreetRender, render_satellite, render_street
from utils.errors import ConfigError


class Sat2StreetModel(nn.Module):
    """
    生成器侧全部可学习参数
    
    Args:
        config: 完整配置
        decoder_variant: 覆盖 model.decoder_variant
        sky_branch: False 时不构造天空生成器
    """

    def __init__(self, config: Dict[str, Any], decoder_variant: Optional[str] = None, sky_branch: bool = True):
        super().__init__()
        scene, cam, model = config['scene'], config['camera'], config['model']
        self.config = config
        self.frame: WorldFrame = frame_from_config(config)
        self.sat_camera = satellite_camera_from_config(config, self.frame)
        self.settings = RenderSettings.from_config(config)

        style_dim = int(model['style_dim'])
        plane_channels = int(model['plane_channels'])
        self.generator = TriPlaneGenerator(
            input_size=int(scene['sat_size']),
            plane_resolution=int(model['plane_resolution']),
            plane_channels=plane_channels,
            depth=int(model['generator_depth']),
            width=int(model['generator_width']),
        )
        self.mapper = IlluminationMapper(FEATURE_DIM, style_dim, int(model['mapper_layers']))
        self.decoder = FieldDecoder(
            variant=decoder_variant or model['decoder_variant'],
            feature_dim=3 * plane_channels,
            hidden_dim=int(model['decoder_hidden']),
            style_dim=style_dim,
        )
        self.sky = SkyGenerator(
            height=int(cam['pano_height']),
            width=int(cam['pano_width']),
            style_dim=style_dim,
            n_blocks=int(model['sky_blocks']),
            channels=int(model['sky_width']),
        ) if sky_branch else None
        self.sr = SuperResolver(channels=int(model['sr_width']))

    @property
    def style_dim(self) -> int:
        return self.decoder.style_dim

    def groups(self) -> Dict[str, nn.Module]:
        """检查点参数组"""
        groups = {'generator': self.generator, 'mapper': self.mapper, 'decoder': self.decoder, 'sr': self.sr}
        if self.sky is not None:
            groups['sky'] = self.sky
        return groups

    def encode(self, sat_image: torch.Tensor) -> TriPlane:
        return generate_triplane(self.generator, sat_image)

    def style(self, policy: str, batch_size: int = 1,
              illumination: Optional[torch.Tensor] = None,
              pool: Optional[Sequence[IlluminationFeature]] = None,
              seed: int = 0) -> StyleVector:
        """
        按光照策略得到风格向量
        
        Args:
            policy: 'real'（使用给定 f_ill）| 'random'（从训练集光照池抽样）| 'null'（零向量）
            batch_size: 批大小
            illumination: real 策略下的 (B, 270) 光照特征
            pool: random 策略下的光照池
            seed: random 策略的抽样种子（第 b 个样本用 seed + b）
        """
        dtype = next(self.parameters()).dtype
        if policy == 'null':
            return null_style(batch_size, self.style_dim, dtype=dtype)
        if policy == 'real':
            if illumination is None:
                raise ConfigError("real 光照策略需要提供光照特征")
            values = illumination.to(dtype)
            if values.dim() == 1:
                values = values.unsqueeze(0)
            return map_illumination(IlluminationFeature(values, PROVENANCE_REAL), self.mapper)
        if policy == 'random':
            if not pool:
                raise ConfigError("random 光照策略需要非空的光照池")
            picks = [sample_training_illumination(pool, seed + b) for b in range(batch_size)]
            values = torch.stack([p.values for p in picks]).to(dtype)
            return map_illumination(IlluminationFeature(values, picks[0].provenance), self.mapper)
        raise ConfigError(f"未知的光照策略: {policy}")

    def cameras(self, offsets: Sequence[Sequence[float]], scale: int = 1) -> List[PanoramaCamera]:
        """(east_m, north_m, heading_rad) 列表 -> 全景相机"""
        return [panorama_camera_from_config(self.config, self.frame, e, n, h, scale) for e, n, h in offsets]

    def render_street(self, planes: TriPlane, w: StyleVector, cams, generator: Optional[torch.Generator] = None,
                      settings: Optional[RenderSettings] = None) -> StreetRender:
        return render_street(planes, self.decoder, w, self.sky, self.sr, cams, self.frame,
                             settings or self.settings, generator)

    def render_satellite(self, planes: TriPlane, downscale: int = 1, crop=None,
                         generator: Optional[torch.Generator] = None) -> RenderOutput:
        cam = self.sat_camera.downscaled(downscale) if downscale > 1 else self.sat_camera
        return render_satellite(planes, self.decoder, cam, self.frame, crop, self.settings, generator)


def build_discriminators(config: Dict[str, Any]) -> Discriminators:
    model = config['model']
    return Discriminators(channels=int(model['disc_width']), depth=int(model['disc_depth']))
