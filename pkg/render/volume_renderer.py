"""
体渲染
τ_i = T_i·(1 − exp(−σ_i δ_i))，T_i = Π_{j<i} exp(−σ_j δ_j)（前向到后向，不含第 i 段）；
Î_F = Σ τ_i φ_i，Ô = Σ τ_i，D̂ = Σ τ_i d_i。
街景 = 地面体渲染 ⊕ 天空生成（按地面不透明度 alpha 混合）-> 超分；卫星视角用 null 风格、不生成天空、不超分。
"""
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F

from geometry.cameras import (
    PanoramaCamera,
    RayBundle,
    SatelliteOrthoCamera,
    WorldFrame,
    panorama_rays,
    satellite_rays,
    stack_bundles,
    world_to_normalized,
)
from models.decoder import FieldDecoder
from models.illumination import StyleVector, null_style
from models.sky_generator import SkyGenerator
from models.super_resolution import SuperResolver
from models.triplane import TriPlane, query_points
from utils.errors import InvalidRangeError, ShapeMismatchError


@dataclass
class RenderOutput:
    """feature (B,32,H,W)；opacity (B,1,H,W) ∈ [0,1]；depth (B,1,H,W) 米"""
    feature: torch.Tensor
    opacity: torch.Tensor
    depth: torch.Tensor

    @property
    def raw_color(self) -> torch.Tensor:
        """特征前三通道（视图，不复制）"""
        return self.feature[:, :3]


@dataclass
class StreetRender:
    """街景渲染的全部中间结果（训练目标需要）"""
    hi_res: torch.Tensor          # (B, 3, 2H, 2W)
    raw_blend: torch.Tensor       # (B, 3, H, W)
    ground: RenderOutput
    sky_feature: torch.Tensor     # (B, 32, H, W)
    blended: torch.Tensor         # (B, 32, H, W)

    @property
    def sky_color(self) -> torch.Tensor:
        return self.sky_feature[:, :3]


@dataclass
class RenderSettings:
    """渲染参数（由配置 camera/render 段构造）"""
    n_samples: int = 32
    t_near: float = 0.1
    t_far: Optional[float] = None
    sat_samples: int = 32
    chunk_size: Optional[int] = None
    zero_outside: bool = True

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> 'RenderSettings':
        cam, render = config['camera'], config['render']
        return cls(
            n_samples=int(cam['n_samples']),
            t_near=float(cam['t_near']),
            t_far=None if cam.get('t_far') is None else float(cam['t_far']),
            sat_samples=int(cam.get('sat_samples', cam['n_samples'])),
            chunk_size=render.get('chunk_size'),
            zero_outside=bool(render.get('zero_outside', True)),
        )


def _style_values(w: Union[StyleVector, torch.Tensor]) -> torch.Tensor:
    return w.values if isinstance(w, StyleVector) else w


# ==================== 体渲染方程 ====================

def composite_weights(sigmas: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
    """
    计算体渲染权重 τ
    
    Args:
        sigmas: (..., N) 非负密度
        deltas: (..., N) 正区间长度
        
    Returns:
        torch.Tensor: (..., N) 权重，满足 Σ τ_i = 1 − exp(−Σ σ_i δ_i)
    """
    if sigmas.shape[-1] != deltas.shape[-1]:
        raise ShapeMismatchError(f"密度与区间长度的采样数不一致: {sigmas.shape[-1]} vs {deltas.shape[-1]}")
    if bool((sigmas < 0).any()):
        raise InvalidRangeError("密度出现负值")
    if bool((deltas <= 0).any()):
        raise InvalidRangeError("区间长度必须为正")
    optical = sigmas * deltas
    alpha = -torch.expm1(-optical)
    accumulated = torch.cumsum(optical, dim=-1)
    exclusive = torch.cat([torch.zeros_like(accumulated[..., :1]), accumulated[..., :-1]], dim=-1)
    return torch.exp(-exclusive) * alpha


def integrate_ray(weights: torch.Tensor, phis: torch.Tensor, distances: torch.Tensor):
    """
    沿光线加权求和
    
    Args:
        weights: (..., N)
        phis: (..., N, C)
        distances: (..., N) 采样点到相机的距离 d_i
        
    Returns:
        (feature (..., C), opacity (...), depth (...))
    """
    if weights.shape[-1] != phis.shape[-2] or weights.shape[-1] != distances.shape[-1]:
        raise ShapeMismatchError(
            f"采样数不一致: weights {weights.shape[-1]}, phis {phis.shape[-2]}, distances {distances.shape[-1]}"
        )
    feature = (weights.unsqueeze(-1) * phis).sum(dim=-2)
    opacity = weights.sum(dim=-1)
    depth = (weights * distances).sum(dim=-1)
    return feature, opacity, depth


def _scatter_image(values: torch.Tensor, pixel_index: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """(B, M, C) 按 pixel_index 写回 (B, C, H, W)"""
    b, _, c = values.shape
    flat = pixel_index[:, 0] * width + pixel_index[:, 1]
    image = values.new_zeros(b, c, height * width)
    image = image.index_copy(2, flat.to(values.device), values.transpose(1, 2))
    return image.reshape(b, c, height, width)


def _render_chunk(planes: TriPlane, decoder: FieldDecoder, w: torch.Tensor, rays: RayBundle,
                  frame: WorldFrame, batch: int, zero_outside: bool):
    pts = rays.points()
    if pts.dim() == 3:
        pts = pts.unsqueeze(0)
    pts = pts.expand(batch, *pts.shape[1:])
    m, n = pts.shape[1], pts.shape[2]
    normalized, outside = world_to_normalized(pts, frame)
    point_feature = query_points(planes, normalized.reshape(batch, m * n, 3))
    sample = decoder(point_feature.features, w)
    sigma = sample.sigma.reshape(batch, m, n)
    if zero_outside:
        sigma = sigma * (~outside).to(sigma.dtype)
    phi = sample.phi.reshape(batch, m, n, -1)

    deltas = rays.deltas if rays.deltas.dim() == 3 else rays.deltas.unsqueeze(0)
    distances = rays.sample_t if rays.sample_t.dim() == 3 else rays.sample_t.unsqueeze(0)
    deltas = deltas.expand(batch, m, n).to(sigma.dtype)
    distances = distances.expand(batch, m, n).to(sigma.dtype)

    weights = composite_weights(sigma, deltas)
    return integrate_ray(weights, phi, distances)


def render_ground(planes: TriPlane, decoder: FieldDecoder, w: Union[StyleVector, torch.Tensor],
                  rays: RayBundle, frame: WorldFrame, zero_outside: bool = True,
                  chunk_size: Optional[int] = None) -> RenderOutput:
    """
    渲染地面部分：query_points -> decode_batch -> composite_weights -> integrate_ray
    
    Args:
        planes: 三平面（批大小 1 时可广播到多相机）
        decoder: 解码器
        w: 风格向量 (512,) 或 (B, 512)
        rays: 光线束 (M,...) 或批量 (B, M, ...)
        frame: 世界坐标框
        zero_outside: 场景框外点密度置零
        chunk_size: 每块光线数（结果与不分块一致）
        
    Returns:
        RenderOutput: 图像布局由 rays.pixel_index 决定
    """
    w = _style_values(w)
    ray_batch = rays.origins.shape[0] if rays.origins.dim() == 3 else 1
    style_batch = w.shape[0] if w.dim() == 2 else 1
    batch = max(planes.batch_size, ray_batch, style_batch)

    m = rays.n_rays
    chunk = m if not chunk_size else int(chunk_size)
    features, opacities, depths = [], [], []
    for start in range(0, m, chunk):
        index = torch.arange(start, min(start + chunk, m))
        sub = rays if chunk >= m else rays.subset(index)
        f, o, d = _render_chunk(planes, decoder, w, sub, frame, batch, zero_outside)
        features.append(f)
        opacities.append(o)
        depths.append(d)
    feature = torch.cat(features, dim=1)
    opacity = torch.cat(opacities, dim=1).unsqueeze(-1)
    depth = torch.cat(depths, dim=1).unsqueeze(-1)

    h, wd = rays.height, rays.width
    return RenderOutput(
        feature=_scatter_image(feature, rays.pixel_index, h, wd),
        opacity=_scatter_image(opacity, rays.pixel_index, h, wd),
        depth=_scatter_image(depth, rays.pixel_index, h, wd),
    )


# ==================== 天空、混合、超分 ====================

def render_sky(gen: SkyGenerator, w: Union[StyleVector, torch.Tensor]) -> torch.Tensor:
    """G_sky(w_ill) -> (B, 32, H, W)"""
    return gen(_style_values(w))


def blend(ground: RenderOutput, sky_feature: torch.Tensor) -> torch.Tensor:
    """Î_F,str = Ô·Î_F,grd + (1 − Ô)·Î_F,sky"""
    if sky_feature.dim() == 3:
        sky_feature = sky_feature.unsqueeze(0)
    if sky_feature.shape[1:] != ground.feature.shape[1:]:
        raise ShapeMismatchError(
            f"天空特征 {tuple(sky_feature.shape)} 与地面特征 {tuple(ground.feature.shape)} 形状不匹配"
        )
    return ground.opacity * ground.feature + (1.0 - ground.opacity) * sky_feature


def super_resolve(sr: SuperResolver, blended: torch.Tensor) -> torch.Tensor:
    """U(Î_F,str) -> (B, 3, 2H, 2W)"""
    return sr(blended)


def render_street(planes: TriPlane, decoder: FieldDecoder, w: Union[StyleVector, torch.Tensor],
                  sky_gen: Optional[SkyGenerator], sr: SuperResolver,
                  cams: Union[PanoramaCamera, Sequence[PanoramaCamera]], frame: WorldFrame,
                  settings: Optional[RenderSettings] = None,
                  generator: Optional[torch.Generator] = None) -> StreetRender:
    """
    完整街景渲染：render_ground -> render_sky -> blend -> super_resolve
    
    Args:
        planes / decoder / w: 场景与光照
        sky_gen: 天空生成器；None 表示关闭天空分支（天空特征为零）
        sr: 超分模块
        cams: 单个全景相机或每个批元素一个相机
        frame: 世界坐标框
        settings: 渲染参数
        generator: 给定时启用分层抖动采样
        
    Returns:
        StreetRender: hi_res / raw_blend / ground 等中间结果
    """
    settings = settings or RenderSettings()
    cam_list = [cams] if isinstance(cams, PanoramaCamera) else list(cams)
    bundles = [
        panorama_rays(cam, frame, settings.n_samples, settings.t_near, settings.t_far,
                      dtype=planes.xy.dtype, generator=generator)
        for cam in cam_list
    ]
    rays = bundles[0] if len(bundles) == 1 else stack_bundles(bundles)

    ground = render_ground(planes, decoder, w, rays, frame, settings.zero_outside, settings.chunk_size)
    if sky_gen is not None:
        sky_feature = render_sky(sky_gen, w)
        if sky_feature.shape[0] != ground.feature.shape[0]:
            sky_feature = sky_feature.expand(ground.feature.shape[0], -1, -1, -1)
    else:
        sky_feature = torch.zeros_like(ground.feature)
    blended = blend(ground, sky_feature)
    hi_res = super_resolve(sr, blended)
    return StreetRender(
        hi_res=hi_res,
        raw_blend=blended[:, :3],
        ground=ground,
        sky_feature=sky_feature,
        blended=blended,
    )


# ==================== 卫星视角 ====================

def random_crop_window(cam: SatelliteOrthoCamera, generator: Optional[torch.Generator] = None) -> Tuple[int, int, int, int]:
    """随机裁剪窗口 (row0, col0, h, w)，边长为相机画幅的一半"""
    h = max(1, cam.height // 2)
    w = max(1, cam.width // 2)
    row0 = int(torch.randint(0, cam.height - h + 1, (1,), generator=generator))
    col0 = int(torch.randint(0, cam.width - w + 1, (1,), generator=generator))
    return row0, col0, h, w


def render_satellite(planes: TriPlane, decoder: FieldDecoder, cam: SatelliteOrthoCamera, frame: WorldFrame,
                     crop: Optional[Tuple[int, int, int, int]] = None,
                     settings: Optional[RenderSettings] = None,
                     generator: Optional[torch.Generator] = None) -> RenderOutput:
    """
    卫星视角渲染（恒用 null 风格，无天空、无超分）
    
    Args:
        planes / decoder: 场景
        cam: 正射卫星相机（训练时传入 1/4 分辨率相机）
        frame: 世界坐标框
        crop: 可选裁剪窗口 (row0, col0, h, w)
        
    Returns:
        RenderOutput: 裁剪窗口大小的渲染结果
    """
    settings = settings or RenderSettings()
    rays = satellite_rays(cam, frame, settings.sat_samples, window=crop,
                          dtype=planes.xy.dtype, generator=generator)
    w0 = null_style(planes.batch_size, decoder.style_dim, dtype=planes.xy.dtype, device=planes.xy.device)
    return render_ground(planes, decoder, w0, rays, frame, settings.zero_outside, settings.chunk_size)


def crop_image(image: torch.Tensor, crop: Optional[Tuple[int, int, int, int]]) -> torch.Tensor:
    """按 (row0, col0, h, w) 裁剪 (B, C, H, W) 图像"""
    if crop is None:
        return image
    row0, col0, h, w = crop
    return image[..., row0:row0 + h, col0:col0 + w]


def downsample_image(image: torch.Tensor, factor: int) -> torch.Tensor:
    """面积平均降采样（卫星监督图、街景原始分辨率监督图）"""
    if factor == 1:
        return image
    return F.avg_pool2d(image, kernel_size=factor, stride=factor)


def downsample_mask(mask: torch.Tensor, factor: int) -> torch.Tensor:
    """掩码面积平均后以 0.5 为阈值二值化"""
    if factor == 1:
        return mask
    return (F.avg_pool2d(mask, kernel_size=factor, stride=factor) >= 0.5).to(mask.dtype)
