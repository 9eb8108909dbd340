"""超分模块 U：32 通道低分辨率特征 -> 3 通道 2 倍分辨率图像"""
import torch
import torch.nn as nn
import torch.nn.functional as F

from utils.errors import ShapeMismatchError


class SuperResolver(nn.Module):
    """
    conv3x3 -> 2x 双线性上采样 -> conv3x3 -> 1x1 输出头，
    输出加上原始颜色（特征前三通道）的双线性上采样。
    """

    def __init__(self, in_channels: int = 32, channels: int = 64, zero_init_head: bool = False):
        super().__init__()
        self.in_channels = in_channels
        self.conv1 = nn.Conv2d(in_channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.head = nn.Conv2d(channels, 3, 1)
        self.activation = nn.LeakyReLU(0.2)
        if zero_init_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        if feature.dim() == 3:
            feature = feature.unsqueeze(0)
        if feature.shape[1] != self.in_channels:
            raise ShapeMismatchError(f"超分输入通道应为 {self.in_channels}，实际 {feature.shape[1]}")
        size = (feature.shape[-2] * 2, feature.shape[-1] * 2)
        h = self.activation(self.conv1(feature))
        h = F.interpolate(h, size=size, mode='bilinear', align_corners=False)
        h = self.activation(self.conv2(h))
        skip = F.interpolate(feature[:, :3], size=size, mode='bilinear', align_corners=False)
        return self.head(h) + skip
