"""
程序化方块场景
地面平面 (z=0，水平范围与场景框一致) 上摆放若干轴对齐彩色方块；
提供正射卫星光栅化与全景精确光线求交，作为训练样本和几何验证的真值。
"""
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from geometry.cameras import (
    PanoramaCamera,
    SatelliteOrthoCamera,
    WorldFrame,
    frame_from_config,
    panorama_camera_from_config,
    panorama_rays,
    satellite_camera_from_config,
    satellite_pixel_centers,
)
from services.image_io import save_image, save_mask
from services.tensor_io import write_tensor
from utils.errors import InvalidCameraError, InvalidRangeError


logger = logging.getLogger('sat2street')

GROUND_Z = 0.0
SIDE_SHADE = 0.8

Color = Tuple[float, float, float]


@dataclass(frozen=True)
class Box:
    """轴对齐方块：min_corner / max_corner 为世界坐标（米），albedo 为 [0,1] RGB"""
    min_corner: Tuple[float, float, float]
    max_corner: Tuple[float, float, float]
    albedo: Color

    def __post_init__(self):
        if not all(hi > lo for lo, hi in zip(self.min_corner, self.max_corner)):
            raise InvalidRangeError(f"方块尺寸必须为正: {self.min_corner} -> {self.max_corner}")

    @property
    def height(self) -> float:
        return self.max_corner[2]

    def contains(self, point: Sequence[float]) -> bool:
        return all(lo <= p <= hi for lo, p, hi in zip(self.min_corner, point, self.max_corner))


@dataclass
class BoxScene:
    """
    方块场景
    
    Args:
        frame: 世界坐标框（方块必须位于其中）
        boxes: 方块列表
        ground_albedo: 地面颜色
        sky_horizon / sky_top: 天空竖直渐变的地平线颜色与天顶颜色
    """
    frame: WorldFrame
    boxes: List[Box] = field(default_factory=list)
    ground_albedo: Color = (0.45, 0.42, 0.38)
    sky_horizon: Color = (0.85, 0.9, 1.0)
    sky_top: Color = (0.3, 0.5, 0.9)

    def __post_init__(self):
        for box in self.boxes:
            inside = all(
                f_lo <= lo and hi <= f_hi
                for f_lo, lo, hi, f_hi in zip(self.frame.box_min, box.min_corner, box.max_corner, self.frame.box_max)
            )
            if not inside:
                raise InvalidRangeError(f"方块超出场景框: {box}")

    def sky_color(self, elevation: np.ndarray) -> np.ndarray:
        """天空颜色：按俯仰角在地平线色与天顶色之间线性渐变，返回 (..., 3)"""
        s = np.clip(np.asarray(elevation, dtype=np.float64) / (math.pi / 2), 0.0, 1.0)[..., None]
        horizon = np.asarray(self.sky_horizon, dtype=np.float64)
        top = np.asarray(self.sky_top, dtype=np.float64)
        return horizon + s * (top - horizon)


# ==================== 卫星光栅化 ====================

def rasterize_satellite(scene: BoxScene, cam: SatelliteOrthoCamera) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    正射投影：每个像素取其下方最高表面的颜色
    
    Returns:
        (image (3,H,W) ∈ [0,1], heights (H,W) 米)
    """
    xx, yy = satellite_pixel_centers(cam, scene.frame, dtype=torch.float64)
    xx, yy = xx.numpy(), yy.numpy()
    image = np.broadcast_to(np.asarray(scene.ground_albedo, dtype=np.float64), xx.shape + (3,)).copy()
    heights = np.full(xx.shape, GROUND_Z, dtype=np.float64)
    for box in scene.boxes:
        footprint = (
            (xx >= box.min_corner[0]) & (xx <= box.max_corner[0]) &
            (yy >= box.min_corner[1]) & (yy <= box.max_corner[1])
        )
        higher = footprint & (box.height > heights)
        image[higher] = box.albedo
        heights[higher] = box.height
    return torch.from_numpy(image).permute(2, 0, 1).contiguous(), torch.from_numpy(heights)


# ==================== 全景光线求交 ====================

def _ray_box(origins: np.ndarray, directions: np.ndarray, box: Box) -> Tuple[np.ndarray, np.ndarray]:
    """
    slab 法求光线与方块的首个交点
    
    Returns:
        (t_hit (M,) 未命中为 inf, hit_axis (M,) 进入面的法向轴)
    """
    lo = np.asarray(box.min_corner, dtype=np.float64)
    hi = np.asarray(box.max_corner, dtype=np.float64)
    m = origins.shape[0]
    t_enter = np.full(m, -np.inf)
    t_exit = np.full(m, np.inf)
    enter_axis = np.zeros(m, dtype=np.int64)
    valid = np.ones(m, dtype=bool)
    for axis in range(3):
        o, d = origins[:, axis], directions[:, axis]
        parallel = np.abs(d) < 1e-15
        valid &= ~(parallel & ((o < lo[axis]) | (o > hi[axis])))
        with np.errstate(divide='ignore', invalid='ignore'):
            t1 = (lo[axis] - o) / d
            t2 = (hi[axis] - o) / d
        near = np.where(parallel, -np.inf, np.minimum(t1, t2))
        far = np.where(parallel, np.inf, np.maximum(t1, t2))
        update = near > t_enter
        enter_axis = np.where(update, axis, enter_axis)
        t_enter = np.maximum(t_enter, near)
        t_exit = np.minimum(t_exit, far)
    hit = valid & (t_enter <= t_exit) & (t_enter > 0)
    return np.where(hit, t_enter, np.inf), enter_axis


def raytrace_panorama(scene: BoxScene, cam: PanoramaCamera) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    全景精确求交
    
    Args:
        scene: 方块场景
        cam: 全景相机（需位于自由空间）
        
    Returns:
        (image (3,H,W), depth (H,W) 未命中为 inf, sky_mask (H,W) 未命中处为 1)
    """
    for box in scene.boxes:
        if box.contains(cam.position):
            raise InvalidCameraError(f"相机位于方块内部: {cam.position}")
    if cam.position[2] <= GROUND_Z:
        raise InvalidCameraError(f"相机需位于地面之上: {cam.position}")

    rays = panorama_rays(cam, scene.frame, n_samples=2, dtype=torch.float64)
    origins = rays.origins.numpy()
    directions = rays.directions.numpy()
    m = origins.shape[0]

    depth = np.full(m, np.inf)
    colors = np.zeros((m, 3))

    # 地面平面（限于场景框水平范围）
    down = directions[:, 2] < 0
    with np.errstate(divide='ignore', invalid='ignore'):
        t_ground = np.where(down, (GROUND_Z - origins[:, 2]) / directions[:, 2], np.inf)
    hit_xy = origins[:, :2] + directions[:, :2] * np.where(np.isfinite(t_ground), t_ground, 0.0)[:, None]
    fmin, fmax = scene.frame.box_min, scene.frame.box_max
    in_extent = (
        (hit_xy[:, 0] >= fmin[0]) & (hit_xy[:, 0] <= fmax[0]) &
        (hit_xy[:, 1] >= fmin[1]) & (hit_xy[:, 1] <= fmax[1])
    )
    ground_hit = down & in_extent & (t_ground > 0)
    depth = np.where(ground_hit, t_ground, depth)
    colors[ground_hit] = scene.ground_albedo

    for box in scene.boxes:
        t_box, axis = _ray_box(origins, directions, box)
        closer = t_box < depth
        depth = np.where(closer, t_box, depth)
        shade = np.where(axis == 2, 1.0, SIDE_SHADE)[:, None]
        colors = np.where(closer[:, None], shade * np.asarray(box.albedo, dtype=np.float64), colors)

    sky = ~np.isfinite(depth)
    elevation = np.arcsin(np.clip(directions[:, 2], -1.0, 1.0))
    colors[sky] = scene.sky_color(elevation[sky])

    h, w = cam.height, cam.width
    image = torch.from_numpy(colors.reshape(h, w, 3)).permute(2, 0, 1).contiguous()
    return image, torch.from_numpy(depth.reshape(h, w)), torch.from_numpy(sky.reshape(h, w).astype(np.float64))


# ==================== 随机场景与数据集 ====================

def _random_color(rng: np.random.Generator, low: float = 0.1, high: float = 0.9) -> Color:
    return tuple(float(c) for c in rng.uniform(low, high, size=3))


def random_box_scene(frame: WorldFrame, n_boxes: int, seed: int,
                     keep_clear: Optional[Tuple[float, float]] = None,
                     clearance: float = 3.0) -> BoxScene:
    """
    随机方块场景（同一种子结果一致）
    
    Args:
        frame: 世界坐标框
        n_boxes: 方块数量
        seed: 随机种子
        keep_clear: 需保持空旷的水平位置（街景相机所在处）
        clearance: 该位置周围的留空半径（米）
    """
    rng = np.random.default_rng(seed)
    (x0, y0, _), (x1, y1, z1) = frame.box_min, frame.box_max
    boxes = []
    attempts = 0
    while len(boxes) < n_boxes and attempts < 100 * max(n_boxes, 1):
        attempts += 1
        sx, sy = rng.uniform(0.08, 0.25, size=2) * np.array([x1 - x0, y1 - y0])
        cx = rng.uniform(x0 + sx / 2, x1 - sx / 2)
        cy = rng.uniform(y0 + sy / 2, y1 - sy / 2)
        height = float(rng.uniform(0.2, 0.8) * (z1 - GROUND_Z))
        box = Box(
            min_corner=(float(cx - sx / 2), float(cy - sy / 2), GROUND_Z),
            max_corner=(float(cx + sx / 2), float(cy + sy / 2), height),
            albedo=_random_color(rng),
        )
        if keep_clear is not None:
            px, py = keep_clear
            dx = max(box.min_corner[0] - px, 0.0, px - box.max_corner[0])
            dy = max(box.min_corner[1] - py, 0.0, py - box.max_corner[1])
            if math.hypot(dx, dy) < clearance:
                continue
        boxes.append(box)
    if len(boxes) < n_boxes:
        logger.warning(f"⚠️ 仅放置了 {len(boxes)}/{n_boxes} 个方块")
    return BoxScene(
        frame=frame,
        boxes=boxes,
        ground_albedo=_random_color(rng, 0.3, 0.6),
        sky_horizon=_random_color(rng, 0.6, 1.0),
        sky_top=_random_color(rng, 0.2, 0.7),
    )


def make_synthetic_dataset(config: Dict[str, Any], output_dir: str, seed: Optional[int] = None) -> pd.DataFrame:
    """
    生成合成数据集（与 load_dataset 读取的目录结构一致）
    
    输出：sat/*.png、street/*.png（超分分辨率）、mask/*.png、depth/*.ptns、manifest.csv、meta.json
    
    Args:
        config: 完整配置（scene / camera / data 段）
        output_dir: 输出目录
        seed: 随机种子，默认 train.seed
        
    Returns:
        pd.DataFrame: 写入的清单
    """
    seed = int(config['train']['seed'] if seed is None else seed)
    data_cfg = config['data']
    frame = frame_from_config(config)
    sat_cam = satellite_camera_from_config(config, frame)
    rng = np.random.default_rng(seed)
    for sub in ('sat', 'street', 'mask', 'depth'):
        os.makedirs(os.path.join(output_dir, sub), exist_ok=True)

    half = 0.5 * min(frame.extent[0], frame.extent[1])
    rows = []
    for scene_idx in range(int(data_cfg['n_scenes'])):
        positions = [
            (float(rng.uniform(-0.3, 0.3) * half), float(rng.uniform(-0.3, 0.3) * half), float(rng.uniform(-math.pi, math.pi)))
            for _ in range(int(data_cfg['panos_per_scene']))
        ]
        scene = random_box_scene(frame, int(data_cfg['n_boxes']), seed * 1000 + scene_idx,
                                 keep_clear=positions[0][:2])
        scene.boxes = [b for b in scene.boxes if not any(b.contains((e, n, frame.camera_height)) for e, n, _ in positions)]

        sat_image, _ = rasterize_satellite(scene, sat_cam)
        sat_rel = os.path.join('sat', f"scene{scene_idx:04d}.png")
        save_image(os.path.join(output_dir, sat_rel), sat_image)

        for pano_idx, (east, north, heading) in enumerate(positions):
            cam = panorama_camera_from_config(config, frame, east, north, heading, scale=2)
            image, depth, mask = raytrace_panorama(scene, cam)
            stem = f"scene{scene_idx:04d}_pano{pano_idx:02d}"
            street_rel = os.path.join('street', f"{stem}.png")
            mask_rel = os.path.join('mask', f"{stem}.png")
            save_image(os.path.join(output_dir, street_rel), image)
            save_mask(os.path.join(output_dir, mask_rel), mask)
            write_tensor(os.path.join(output_dir, 'depth', f"{stem}.ptns"), depth)
            rows.append({
                'sat': sat_rel, 'street': street_rel, 'mask': mask_rel,
                'east_m': east, 'north_m': north, 'heading_rad': heading,
            })

    manifest = pd.DataFrame(rows, columns=['sat', 'street', 'mask', 'east_m', 'north_m', 'heading_rad'])
    manifest.to_csv(os.path.join(output_dir, 'manifest.csv'), index=False, float_format='%.17g')
    scene_cfg = config['scene']
    meta = {k: scene_cfg[k] for k in ('gsd', 'camera_height', 'z_min', 'z_max', 'sat_size')}
    with open(os.path.join(output_dir, 'meta.json'), 'w', encoding='utf-8') as f:
        json.dump(meta, f, indent=2)
    logger.info(f"✅ 合成数据集已生成: {output_dir}（{len(rows)} 条样本）")
    return manifest
