"""
感知距离（可插拔特征提取器）
默认使用 3 层固定随机卷积（带下采样），特征按通道单位化后取 L2 均值，各层求和。
"""
from typing import Callable, List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from utils.errors import ShapeMismatchError


class RandomConvFeatures(nn.Module):
    """固定种子的随机卷积特征提取器（参数不参与训练）"""

    def __init__(self, channels=(16, 32, 64), seed: int = 1234):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.layers = nn.ModuleList()
        in_ch = 3
        for out_ch in channels:
            conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) / (in_ch * 9) ** 0.5)
                conv.bias.zero_()
            conv.requires_grad_(False)
            self.layers.append(conv)
            in_ch = out_ch

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        feats = []
        h = x * 2.0 - 1.0
        for conv in self.layers:
            h = F.leaky_relu(conv(h), 0.2)
            feats.append(h)
        return feats


class PerceptualDistance(nn.Module):
    """
    Args:
        extractor: 输入 (B,3,H,W) 返回特征图列表的可调用对象；默认 RandomConvFeatures
        eps: 通道单位化的数值稳定项
    """

    def __init__(self, extractor: Optional[Callable[[torch.Tensor], List[torch.Tensor]]] = None,
                 eps: float = 1e-10):
        super().__init__()
        self.extractor = extractor if extractor is not None else RandomConvFeatures()
        self.eps = eps

    def _normalize(self, feat: torch.Tensor) -> torch.Tensor:
        norm = torch.sqrt((feat ** 2).sum(dim=1, keepdim=True) + self.eps)
        return feat / norm

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape != b.shape:
            raise ShapeMismatchError(f"感知距离输入形状不一致: {tuple(a.shape)} vs {tuple(b.shape)}")
        if a.dim() == 3:
            a, b = a.unsqueeze(0), b.unsqueeze(0)
        total = a.new_zeros(())
        for fa, fb in zip(self.extractor(a), self.extractor(b)):
            diff = self._normalize(fa) - self._normalize(fb)
            total = total + (diff ** 2).sum(dim=1).mean()
        return total
