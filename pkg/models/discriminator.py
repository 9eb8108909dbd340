"""判别器：街景双判别（6通道）与卫星视角（3通道），步长卷积分类器输出单个logit"""
import torch
import torch.nn as nn

from utils.errors import ShapeMismatchError


class Discriminator(nn.Module):
    """
    Args:
        in_channels: 输入通道数
        channels: 第一层通道数（逐级翻倍，上限 256）
        depth: 步长为2的卷积层数
        zero_init_head: 输出层置零（D ≡ 0）
    """

    def __init__(self, in_channels: int, channels: int = 32, depth: int = 3, zero_init_head: bool = False):
        super().__init__()
        self.in_channels = in_channels
        layers = [nn.Conv2d(in_channels, channels, 1), nn.LeakyReLU(0.2)]
        ch = channels
        for _ in range(depth):
            nxt = min(ch * 2, 256)
            layers += [nn.Conv2d(ch, nxt, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            ch = nxt
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(ch, 1)
        if zero_init_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatchError(f"判别器输入应为 (B,{self.in_channels},H,W)，实际 {tuple(x.shape)}")
        h = self.body(x * 2.0 - 1.0)
        return self.head(h.mean(dim=(2, 3)))


class Discriminators(nn.Module):
    """D_str（最终图‖上采样原始图，6通道）与 D_sat（卫星渲染，3通道）"""

    def __init__(self, channels: int = 32, depth: int = 3, zero_init_head: bool = False):
        super().__init__()
        self.street = Discriminator(6, channels, depth, zero_init_head)
        self.satellite = Discriminator(3, channels, depth, zero_init_head)
