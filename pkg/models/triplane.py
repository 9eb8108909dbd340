"""
三平面场景表示
卫星图 -> Tri-plane Net -> F_img(96xRxR) -> Split -> {F_XY, F_ZY, F_XZ}，
空间点在三个平面上双线性插值后按 XY‖ZY‖XZ 拼接得到 96 维特征。
"""
from dataclasses import dataclass
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F

from utils.errors import ShapeMismatchError


@dataclass
class TriPlane:
    """
    三平面特征（均为 (B, C, R, R)）
    
    平面坐标约定：F_XY 以 x 索引列、y 索引行；F_ZY 以 z 索引列、y 索引行；F_XZ 以 x 索引列、z 索引行。
    """
    xy: torch.Tensor
    zy: torch.Tensor
    xz: torch.Tensor

    def __post_init__(self):
        if not (self.xy.shape == self.zy.shape == self.xz.shape):
            raise ShapeMismatchError(
                f"三个平面形状不一致: {tuple(self.xy.shape)}, {tuple(self.zy.shape)}, {tuple(self.xz.shape)}"
            )

    @property
    def channels(self) -> int:
        return self.xy.shape[1]

    @property
    def resolution(self) -> int:
        return self.xy.shape[-1]

    @property
    def batch_size(self) -> int:
        return self.xy.shape[0]

    def planes(self) -> List[torch.Tensor]:
        return [self.xy, self.zy, self.xz]

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(p).all()) for p in self.planes())


@dataclass
class PointFeature:
    """点特征：features (B, M, 3C)；outside (B, M) 为 True 表示点在归一化立方体外"""
    features: torch.Tensor
    outside: torch.Tensor


def split_planes(f_img: torch.Tensor) -> TriPlane:
    """
    将 F_img 按通道三等分为三平面
    
    通道 [0,C) -> F_XY，[C,2C) -> F_ZY，[2C,3C) -> F_XZ
    
    Args:
        f_img: (B, 3C, R, R) 或 (3C, R, R)
        
    Returns:
        TriPlane: 各平面 (B, C, R, R)
    """
    if f_img.dim() == 3:
        f_img = f_img.unsqueeze(0)
    if f_img.dim() != 4:
        raise ShapeMismatchError(f"F_img 需为 3 或 4 维张量: {tuple(f_img.shape)}")
    channels = f_img.shape[1]
    if channels % 3 != 0:
        raise ShapeMismatchError(f"F_img 通道数 {channels} 不能被3整除")
    c = channels // 3
    return TriPlane(xy=f_img[:, :c], zy=f_img[:, c:2 * c], xz=f_img[:, 2 * c:])


def texel_center(index: int, resolution: int) -> float:
    """第 index 个纹素中心的归一化坐标（align_corners=False 约定）"""
    return (2.0 * index + 1.0) / resolution - 1.0


def query_points(planes: TriPlane, pts: torch.Tensor) -> PointFeature:
    """
    查询三平面点特征（双线性插值，边界外按边缘钳制并打标记）
    
    Args:
        planes: 三平面
        pts: (B, M, 3) 或 (M, 3) 归一化坐标
        
    Returns:
        PointFeature: features (B, M, 3C)
    """
    if pts.dim() == 2:
        pts = pts.unsqueeze(0)
    if pts.shape[-1] != 3:
        raise ShapeMismatchError(f"点坐标最后一维需为3: {tuple(pts.shape)}")
    if pts.shape[0] != planes.batch_size and planes.batch_size != 1:
        raise ShapeMismatchError(f"点批大小 {pts.shape[0]} 与平面批大小 {planes.batch_size} 不一致")
    planes_list = [p.expand(pts.shape[0], -1, -1, -1) for p in planes.planes()]

    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    coords = [
        torch.stack([x, y], dim=-1),   # F_XY
        torch.stack([z, y], dim=-1),   # F_ZY
        torch.stack([x, z], dim=-1),   # F_XZ
    ]
    sampled = []
    for plane, grid in zip(planes_list, coords):
        out = F.grid_sample(
            plane, grid.unsqueeze(2).to(plane.dtype),
            mode='bilinear', padding_mode='border', align_corners=False,
        )  # (B, C, M, 1)
        sampled.append(out.squeeze(-1).permute(0, 2, 1))
    features = torch.cat(sampled, dim=-1)
    outside = (pts.abs() > 1.0).any(dim=-1)
    return PointFeature(features=features, outside=outside)


class _ConvBlock(nn.Module):
    """两层 3x3 卷积 + LeakyReLU（不使用归一化层）"""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.LeakyReLU(0.2),
        )

    def forward(self, x):
        return self.body(x)


class TriPlaneGenerator(nn.Module):
    """
    Tri-plane Net：U-Net 式编码-解码，保持卫星图分辨率，线性输出头
    
    Args:
        input_size: 卫星图边长 S
        plane_resolution: 平面分辨率 R（与 S 不同时对输出做双线性缩放）
        plane_channels: 每个平面通道数 C（输出通道 = 3C）
        depth: 下/上采样级数
        width: 第一级通道数（逐级翻倍，上限 256）
        zero_init_head: 输出头权重和偏置置零
    """

    def __init__(self, input_size: int = 64, plane_resolution: int = 64, plane_channels: int = 32,
                 depth: int = 4, width: int = 32, zero_init_head: bool = False):
        super().__init__()
        if input_size % (2 ** depth) != 0:
            raise ShapeMismatchError(f"输入尺寸 {input_size} 不能被 2^{depth} 整除")
        self.input_size = input_size
        self.plane_resolution = plane_resolution
        self.plane_channels = plane_channels

        widths = [min(width * 2 ** i, 256) for i in range(depth + 1)]
        self.stem = _ConvBlock(3, widths[0])
        self.downs = nn.ModuleList([_ConvBlock(widths[i], widths[i + 1], stride=2) for i in range(depth)])
        self.ups = nn.ModuleList([
            _ConvBlock(widths[i + 1] + widths[i], widths[i]) for i in reversed(range(depth))
        ])
        self.head = nn.Conv2d(widths[0], 3 * plane_channels, 1)
        if zero_init_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, sat_image: torch.Tensor) -> torch.Tensor:
        if sat_image.dim() != 4 or sat_image.shape[1] != 3 or \
                sat_image.shape[-2:] != (self.input_size, self.input_size):
            raise ShapeMismatchError(
                f"卫星图需为 (B,3,{self.input_size},{self.input_size})，实际 {tuple(sat_image.shape)}"
            )
        h = self.stem(sat_image * 2.0 - 1.0)
        skips = [h]
        for down in self.downs:
            h = down(h)
            skips.append(h)
        skips.pop()
        for up in self.ups:
            skip = skips.pop()
            h = F.interpolate(h, size=skip.shape[-2:], mode='bilinear', align_corners=False)
            h = up(torch.cat([h, skip], dim=1))
        f_img = self.head(h)
        if f_img.shape[-1] != self.plane_resolution:
            f_img = F.interpolate(f_img, size=(self.plane_resolution, self.plane_resolution),
                                  mode='bilinear', align_corners=False)
        return f_img


def generate_triplane(generator: TriPlaneGenerator, sat_image: torch.Tensor) -> TriPlane:
    """
    由卫星图生成三平面
    
    Args:
        generator: Tri-plane Net
        sat_image: (3, S, S) 或 (B, 3, S, S)，取值 [0,1]
        
    Returns:
        TriPlane: 各平面 (B, C, R, R)
    """
    if sat_image.dim() == 3:
        sat_image = sat_image.unsqueeze(0)
    return split_planes(generator(sat_image))
