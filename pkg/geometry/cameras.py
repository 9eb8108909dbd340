"""
场景几何
世界坐标系约定为 (东, 北, 上) 右手系；卫星图第0行为北、第0列为西。
提供全景相机、正射卫星相机的光线生成，以及世界坐标到归一化立方体的映射。
"""
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

import torch

from utils.errors import InvalidCameraError, InvalidRangeError, ShapeMismatchError


NORTH_AXIS = (0.0, 1.0, 0.0)
UP_AXIS = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class WorldFrame:
    """世界坐标框：scene_box 映射到归一化立方体 [-1,1]^3"""
    box_min: Tuple[float, float, float]
    box_max: Tuple[float, float, float]
    camera_height: float
    north_axis: Tuple[float, float, float] = NORTH_AXIS
    up_axis: Tuple[float, float, float] = UP_AXIS

    def __post_init__(self):
        for axis, (lo, hi) in enumerate(zip(self.box_min, self.box_max)):
            if not hi > lo:
                raise InvalidCameraError(f"场景框第{axis}轴范围非正: [{lo}, {hi}]")
        if not self.box_min[2] < self.camera_height < self.box_max[2]:
            raise InvalidCameraError(
                f"相机高度 {self.camera_height} 不在场景框竖直范围 ({self.box_min[2]}, {self.box_max[2]}) 内"
            )

    @property
    def extent(self) -> Tuple[float, float, float]:
        return tuple(hi - lo for lo, hi in zip(self.box_min, self.box_max))

    @property
    def center(self) -> Tuple[float, float, float]:
        return tuple(0.5 * (lo + hi) for lo, hi in zip(self.box_min, self.box_max))

    @property
    def diagonal(self) -> float:
        return math.sqrt(sum(e * e for e in self.extent))


@dataclass(frozen=True)
class PanoramaCamera:
    """
    全景相机（柱面投影，中心列朝正北）
    
    Args:
        position: 世界坐标位置（米）
        heading_offset: 航向偏移（弧度，0 表示对准正北，顺时针为正）
        width / height: 像素尺寸（默认宽:高 = 4:1）
        elevation_range: (e_min, e_max) 俯仰角范围（弧度）
        mapping: 'linear' 俯仰角按行线性插值；'tan' 按柱面高度（tan）线性插值
    """
    position: Tuple[float, float, float]
    heading_offset: float = 0.0
    width: int = 256
    height: int = 64
    elevation_range: Tuple[float, float] = (-math.pi / 4, math.pi / 4)
    mapping: str = 'linear'

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidCameraError(f"图像尺寸必须为正: {self.height}x{self.width}")
        e_min, e_max = self.elevation_range
        if not e_min < 0 < e_max:
            raise InvalidCameraError(f"俯仰角范围需满足 e_min < 0 < e_max: {self.elevation_range}")
        if self.mapping not in ('linear', 'tan'):
            raise InvalidCameraError(f"未知的行映射方式: {self.mapping}")
        if self.mapping == 'tan' and not (e_min > -math.pi / 2 and e_max < math.pi / 2):
            raise InvalidCameraError("tan 映射要求俯仰角严格位于 (-pi/2, pi/2)")


@dataclass(frozen=True)
class SatelliteOrthoCamera:
    """
    正射卫星相机（竖直向下），成像区域以场景框水平中心为中心
    
    Args:
        ground_sample_distance: 地面采样距离（米/像素）
        width / height: 像素尺寸
        altitude: 光线起点平面高度（米），需不低于场景框顶
    """
    ground_sample_distance: float
    width: int
    height: int
    altitude: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidCameraError(f"图像尺寸必须为正: {self.height}x{self.width}")
        if self.ground_sample_distance <= 0:
            raise InvalidCameraError(f"地面采样距离必须为正: {self.ground_sample_distance}")

    def downscaled(self, factor: int) -> 'SatelliteOrthoCamera':
        """按整数倍降采样（覆盖范围不变）"""
        if factor < 1 or self.width % factor or self.height % factor:
            raise InvalidCameraError(f"降采样倍数 {factor} 不能整除 {self.height}x{self.width}")
        return replace(
            self,
            ground_sample_distance=self.ground_sample_distance * factor,
            width=self.width // factor,
            height=self.height // factor,
        )


@dataclass(frozen=True)
class RayBundle:
    """
    光线束（行优先排列）
    
    origins / directions: (..., M, 3)；sample_t / deltas: (..., M, N)；
    pixel_index: (M, 2) 的 (row, col)，相对于本光线束对应的 height x width 图像。
    """
    origins: torch.Tensor
    directions: torch.Tensor
    sample_t: torch.Tensor
    deltas: torch.Tensor
    pixel_index: torch.Tensor
    height: int
    width: int
    t_far: float = field(default=float('inf'))

    @property
    def n_rays(self) -> int:
        return self.pixel_index.shape[0]

    @property
    def n_samples(self) -> int:
        return self.sample_t.shape[-1]

    def points(self) -> torch.Tensor:
        """采样点世界坐标 (..., M, N, 3)"""
        return self.origins.unsqueeze(-2) + self.directions.unsqueeze(-2) * self.sample_t.unsqueeze(-1)

    def subset(self, index: torch.Tensor) -> 'RayBundle':
        """按光线索引取子集（用于分块渲染）"""
        return replace(
            self,
            origins=self.origins[..., index, :],
            directions=self.directions[..., index, :],
            sample_t=self.sample_t[..., index, :],
            deltas=self.deltas[..., index, :],
            pixel_index=self.pixel_index[index],
        )


def stack_bundles(bundles) -> RayBundle:
    """
    将同尺寸的多个光线束堆叠成批（批维在最前）
    
    Args:
        bundles: RayBundle 列表（同一分辨率、同一采样数）
        
    Returns:
        RayBundle: origins 形状 (B, M, 3)
    """
    bundles = list(bundles)
    first = bundles[0]
    for b in bundles[1:]:
        if (b.height, b.width, b.n_samples) != (first.height, first.width, first.n_samples):
            raise ShapeMismatchError("堆叠的光线束分辨率或采样数不一致")
    return RayBundle(
        origins=torch.stack([b.origins for b in bundles]),
        directions=torch.stack([b.directions for b in bundles]),
        sample_t=torch.stack([b.sample_t for b in bundles]),
        deltas=torch.stack([b.deltas for b in bundles]),
        pixel_index=first.pixel_index,
        height=first.height,
        width=first.width,
        t_far=max(b.t_far for b in bundles),
    )


def _sample_intervals(n_rays: int, n_samples: int, t_near: float, t_far: float,
                      dtype: torch.dtype, generator: Optional[torch.Generator] = None):
    """
    在 [t_near, t_far] 上均匀分 N 段取采样点
    
    默认取每段中点（确定性）；给定 generator 时段内分层抖动。
    deltas[i] = t[i+1] - t[i]，最后一段复制前一段长度。
    """
    step = (t_far - t_near) / n_samples
    bins = torch.arange(n_samples, dtype=dtype)
    if generator is None:
        offsets = torch.full((n_rays, n_samples), 0.5, dtype=dtype)
    else:
        offsets = torch.rand((n_rays, n_samples), generator=generator, dtype=dtype)
    sample_t = t_near + (bins.unsqueeze(0) + offsets) * step
    if generator is None:
        deltas = torch.full((n_rays, n_samples), step, dtype=dtype)
    else:
        diffs = sample_t[:, 1:] - sample_t[:, :-1]
        deltas = torch.cat([diffs, diffs[:, -1:]], dim=1)
    return sample_t, deltas


def _pixel_grid(height: int, width: int, row0: int = 0, col0: int = 0):
    rows = torch.arange(row0, row0 + height)
    cols = torch.arange(col0, col0 + width)
    rr, cc = torch.meshgrid(rows, cols, indexing='ij')
    return rr.reshape(-1), cc.reshape(-1)


def panorama_azimuth(cols: torch.Tensor, width: int) -> torch.Tensor:
    """列 u 对应方位角 θ(u) = 2π(u+0.5)/W − π（自正北顺时针）"""
    return 2.0 * math.pi * (cols + 0.5) / width - math.pi


def panorama_elevation(rows: torch.Tensor, height: int, elevation_range, mapping: str = 'linear') -> torch.Tensor:
    """行 v 对应俯仰角：顶行接近 e_max，底行接近 e_min（像素中心）"""
    e_min, e_max = elevation_range
    s = (rows + 0.5) / height
    if mapping == 'linear':
        return e_max - s * (e_max - e_min)
    top, bottom = math.tan(e_max), math.tan(e_min)
    return torch.atan(top - s * (top - bottom))


def panorama_rays(cam: PanoramaCamera, frame: WorldFrame, n_samples: int,
                  t_near: float = 0.1, t_far: Optional[float] = None,
                  dtype: Optional[torch.dtype] = None,
                  generator: Optional[torch.Generator] = None) -> RayBundle:
    """
    生成全景相机光线
    
    Args:
        cam: 全景相机
        frame: 世界坐标框
        n_samples: 每条光线采样数（≥2）
        t_near / t_far: 采样区间（米），t_far 默认为场景框对角线
        dtype: 浮点类型，默认 torch 默认类型
        generator: 给定时启用分层抖动采样
        
    Returns:
        RayBundle: H*W 条光线，行优先
    """
    dtype = dtype or torch.get_default_dtype()
    t_far = frame.diagonal if t_far is None else t_far
    if n_samples < 2:
        raise InvalidRangeError(f"采样数至少为2: {n_samples}")
    if not 0 < t_near < t_far:
        raise InvalidRangeError(f"需满足 0 < t_near < t_far: {t_near}, {t_far}")

    rows, cols = _pixel_grid(cam.height, cam.width)
    theta = panorama_azimuth(cols.to(dtype), cam.width) + cam.heading_offset
    phi = panorama_elevation(rows.to(dtype), cam.height, cam.elevation_range, cam.mapping)
    directions = torch.stack([
        torch.sin(theta) * torch.cos(phi),
        torch.cos(theta) * torch.cos(phi),
        torch.sin(phi),
    ], dim=-1)
    directions = directions / directions.norm(dim=-1, keepdim=True)
    origins = torch.tensor(cam.position, dtype=dtype).expand(directions.shape).clone()
    sample_t, deltas = _sample_intervals(directions.shape[0], n_samples, t_near, t_far, dtype, generator)

    return RayBundle(
        origins=origins,
        directions=directions,
        sample_t=sample_t,
        deltas=deltas,
        pixel_index=torch.stack([rows, cols], dim=-1),
        height=cam.height,
        width=cam.width,
        t_far=float(t_far),
    )


def satellite_pixel_centers(cam: SatelliteOrthoCamera, frame: WorldFrame,
                            dtype: Optional[torch.dtype] = None):
    """卫星图像素中心的 (x, y) 世界坐标，形状 (H, W)；第0行为北、第0列为西"""
    dtype = dtype or torch.get_default_dtype()
    cx, cy, _ = frame.center
    gsd = cam.ground_sample_distance
    cols = torch.arange(cam.width, dtype=dtype)
    rows = torch.arange(cam.height, dtype=dtype)
    xs = cx + (cols + 0.5 - cam.width / 2.0) * gsd
    ys = cy + (cam.height / 2.0 - rows - 0.5) * gsd
    yy, xx = torch.meshgrid(ys, xs, indexing='ij')
    return xx, yy


def satellite_rays(cam: SatelliteOrthoCamera, frame: WorldFrame, n_samples: int,
                   window: Optional[Tuple[int, int, int, int]] = None,
                   dtype: Optional[torch.dtype] = None,
                   generator: Optional[torch.Generator] = None) -> RayBundle:
    """
    生成正射卫星光线（方向恒为 (0,0,-1)）
    
    采样区间覆盖光线在场景框内的整段：从 altitude - z_max 到 altitude - z_min，
    altitude 等于场景框顶时即从起点平面开始。
    
    Args:
        cam: 卫星相机
        frame: 世界坐标框
        n_samples: 每条光线采样数
        window: 可选裁剪窗口 (row0, col0, h, w)
        
    Returns:
        RayBundle: 窗口内光线，pixel_index 相对窗口
    """
    dtype = dtype or torch.get_default_dtype()
    ex, ey, _ = frame.extent
    tol = 1e-9 * max(ex, ey)
    if cam.width * cam.ground_sample_distance > ex + tol or cam.height * cam.ground_sample_distance > ey + tol:
        raise InvalidCameraError(
            f"卫星相机覆盖范围 {cam.width * cam.ground_sample_distance}x{cam.height * cam.ground_sample_distance}m 超出场景框 {ex}x{ey}m"
        )
    if cam.altitude < frame.box_max[2]:
        raise InvalidCameraError(f"相机高度 {cam.altitude} 低于场景框顶 {frame.box_max[2]}")
    if n_samples < 2:
        raise InvalidRangeError(f"采样数至少为2: {n_samples}")

    row0, col0, h, w = window if window is not None else (0, 0, cam.height, cam.width)
    if h <= 0 or w <= 0 or row0 < 0 or col0 < 0 or row0 + h > cam.height or col0 + w > cam.width:
        raise InvalidRangeError(f"裁剪窗口越界: {window}，图像 {cam.height}x{cam.width}")

    xx, yy = satellite_pixel_centers(cam, frame, dtype)
    xx = xx[row0:row0 + h, col0:col0 + w].reshape(-1)
    yy = yy[row0:row0 + h, col0:col0 + w].reshape(-1)
    origins = torch.stack([xx, yy, torch.full_like(xx, cam.altitude)], dim=-1)
    directions = torch.zeros_like(origins)
    directions[:, 2] = -1.0

    t_near = cam.altitude - frame.box_max[2]
    t_far = cam.altitude - frame.box_min[2]
    sample_t, deltas = _sample_intervals(origins.shape[0], n_samples, t_near, t_far, dtype, generator)
    rows, cols = _pixel_grid(h, w)

    return RayBundle(
        origins=origins,
        directions=directions,
        sample_t=sample_t,
        deltas=deltas,
        pixel_index=torch.stack([rows, cols], dim=-1),
        height=h,
        width=w,
        t_far=t_far,
    )


def world_to_normalized(p: torch.Tensor, frame: WorldFrame):
    """
    世界坐标（米）仿射映射到归一化立方体
    
    Args:
        p: (..., 3) 世界坐标
        frame: 世界坐标框
        
    Returns:
        (normalized, outside): normalized 形状同 p；outside 为 (...) 布尔张量，框外为 True
    """
    lo = torch.as_tensor(frame.box_min, dtype=p.dtype, device=p.device)
    hi = torch.as_tensor(frame.box_max, dtype=p.dtype, device=p.device)
    normalized = 2.0 * (p - lo) / (hi - lo) - 1.0
    outside = (normalized.abs() > 1.0).any(dim=-1)
    return normalized, outside


# ==================== 由配置构造 ====================

def frame_from_config(config: Dict[str, Any]) -> WorldFrame:
    """由配置构造世界坐标框（水平范围与卫星图覆盖范围一致，中心在原点）"""
    scene = config['scene']
    half = 0.5 * scene['sat_size'] * scene['gsd']
    return WorldFrame(
        box_min=(-half, -half, float(scene['z_min'])),
        box_max=(half, half, float(scene['z_max'])),
        camera_height=float(scene['camera_height']),
    )


def satellite_camera_from_config(config: Dict[str, Any], frame: WorldFrame) -> SatelliteOrthoCamera:
    scene = config['scene']
    return SatelliteOrthoCamera(
        ground_sample_distance=float(scene['gsd']),
        width=int(scene['sat_size']),
        height=int(scene['sat_size']),
        altitude=frame.box_max[2],
    )


def panorama_camera_from_config(config: Dict[str, Any], frame: WorldFrame,
                                east_m: float = 0.0, north_m: float = 0.0,
                                heading_rad: float = 0.0, scale: int = 1) -> PanoramaCamera:
    """
    由配置构造全景相机
    
    Args:
        scale: 分辨率倍数（1 为体渲染分辨率，2 为超分分辨率）
    """
    cam_cfg = config['camera']
    return PanoramaCamera(
        position=(float(east_m), float(north_m), frame.camera_height),
        heading_offset=float(heading_rad),
        width=int(cam_cfg['pano_width']) * scale,
        height=int(cam_cfg['pano_height']) * scale,
        elevation_range=(float(cam_cfg['elevation_min']), float(cam_cfg['elevation_max'])),
        mapping=cam_cfg.get('mapping', 'linear'),
    )
