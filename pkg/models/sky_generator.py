"""
天空生成器 G_sky（StyleGAN2 式调制卷积）
学习常量 -> 若干 (上采样 + 调制卷积) 合成块 -> 1x1 调制卷积输出 32 通道天空特征图。
"""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from utils.errors import ShapeMismatchError


class ModulatedConv2d(nn.Module):
    """
    权重调制/解调卷积
    
    风格向量经仿射层得到逐输入通道缩放 s，卷积核按样本缩放后（可选）按输出通道归一化，
    再用分组卷积一次算完整个批次。
    """

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, style_dim: int,
                 demodulate: bool = True, eps: float = 1e-8):
        super().__init__()
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.padding = kernel_size // 2
        self.demodulate = demodulate
        self.eps = eps
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel_size, kernel_size))
        self.scale = 1.0 / math.sqrt(in_ch * kernel_size * kernel_size)
        self.affine = nn.Linear(style_dim, in_ch)
        nn.init.ones_(self.affine.bias)
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        b, _, h, wd = x.shape
        s = self.affine(w)                                        # (B, in)
        weights = self.weight[None] * self.scale * s[:, None, :, None, None]
        if self.demodulate:
            sigma_inv = torch.rsqrt((weights ** 2).sum(dim=(2, 3, 4), keepdim=True) + self.eps)
            weights = weights * sigma_inv
        x = x.reshape(1, b * self.in_ch, h, wd)
        weights = weights.reshape(b * self.out_ch, self.in_ch, *weights.shape[-2:])
        out = F.conv2d(x, weights, padding=self.padding, groups=b)
        return out.reshape(b, self.out_ch, h, wd) + self.bias[None, :, None, None]


class SkyGenerator(nn.Module):
    """
    Args:
        height / width: 输出天空特征图尺寸（与体渲染分辨率一致）
        out_channels: 输出通道（32）
        style_dim: 风格向量维度
        n_blocks: 上采样合成块数（常量分辨率为输出的 1/2^n）
        channels: 常量与合成块通道数
        zero_init_output: 输出层权重和偏置置零
    """

    def __init__(self, height: int = 64, width: int = 256, out_channels: int = 32, style_dim: int = 512,
                 n_blocks: int = 3, channels: int = 32, zero_init_output: bool = False):
        super().__init__()
        factor = 2 ** n_blocks
        if height % factor or width % factor:
            raise ShapeMismatchError(f"天空图尺寸 {height}x{width} 不能被 {factor} 整除")
        self.height = height
        self.width = width
        self.style_dim = style_dim
        self.const = nn.Parameter(torch.randn(1, channels, height // factor, width // factor))
        self.conv0 = ModulatedConv2d(channels, channels, 3, style_dim)
        self.blocks = nn.ModuleList([ModulatedConv2d(channels, channels, 3, style_dim) for _ in range(n_blocks)])
        self.to_feature = ModulatedConv2d(channels, out_channels, 1, style_dim, demodulate=False)
        self.activation = nn.LeakyReLU(0.2)
        if zero_init_output:
            nn.init.zeros_(self.to_feature.weight)
            nn.init.zeros_(self.to_feature.bias)

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        if w.dim() == 1:
            w = w.unsqueeze(0)
        if w.shape[-1] != self.style_dim:
            raise ShapeMismatchError(f"风格向量维度应为 {self.style_dim}，实际 {w.shape[-1]}")
        x = self.const.expand(w.shape[0], -1, -1, -1).to(w.dtype)
        x = self.activation(self.conv0(x, w))
        for block in self.blocks:
            x = F.interpolate(x, scale_factor=2, mode='bilinear', align_corners=False)
            x = self.activation(block(x, w))
        return self.to_feature(x, w)
