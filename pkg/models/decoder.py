"""
三平面解码器
adaptive：第一层输出分两支，密度支只看 hidden，颜色支看 hidden‖w_ill；
vanilla：第二层一次性输出 σ 与 φ，不使用风格向量。
"""
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from utils.errors import ShapeMismatchError, ConfigError


VARIANTS = ('adaptive', 'vanilla')


@dataclass
class FieldSample:
    """sigma (...,) 非负密度（1/米）；phi (..., 32) 外观特征，前3维为原始颜色"""
    sigma: torch.Tensor
    phi: torch.Tensor


class FieldDecoder(nn.Module):
    """
    Args:
        variant: 'adaptive' | 'vanilla'
        feature_dim: 三平面点特征维度（96）
        hidden_dim: 第一层宽度 h
        style_dim: 风格向量维度（512）
        out_dim: 外观特征维度（32）
        zero_init_heads: 输出头权重和偏置置零
    """

    def __init__(self, variant: str = 'adaptive', feature_dim: int = 96, hidden_dim: int = 64,
                 style_dim: int = 512, out_dim: int = 32, zero_init_heads: bool = False):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigError(f"未知的解码器类型: {variant}")
        self.variant = variant
        self.feature_dim = feature_dim
        self.style_dim = style_dim
        self.out_dim = out_dim

        self.fc1 = nn.Linear(feature_dim, hidden_dim)
        self.activation = nn.Softplus()
        if variant == 'adaptive':
            self.density_head = nn.Linear(hidden_dim, 1)
            self.color_head = nn.Linear(hidden_dim + style_dim, out_dim)
            heads = [self.density_head, self.color_head]
        else:
            self.joint_head = nn.Linear(hidden_dim, out_dim + 1)
            heads = [self.joint_head]
        if zero_init_heads:
            for head in heads:
                nn.init.zeros_(head.weight)
                nn.init.zeros_(head.bias)

    def forward(self, f_tri: torch.Tensor, w: torch.Tensor) -> FieldSample:
        """
        Args:
            f_tri: (..., 96) 点特征
            w: 风格向量，(512,) 或与 f_tri 前导批维一致的 (B, 512)，在点维上广播
        """
        if f_tri.shape[-1] != self.feature_dim:
            raise ShapeMismatchError(f"点特征维度应为 {self.feature_dim}，实际 {f_tri.shape[-1]}")
        if w.shape[-1] != self.style_dim:
            raise ShapeMismatchError(f"风格向量维度应为 {self.style_dim}，实际 {w.shape[-1]}")
        hidden = self.activation(self.fc1(f_tri))

        if self.variant == 'vanilla':
            out = self.joint_head(hidden)
            return FieldSample(sigma=F.softplus(out[..., 0]), phi=out[..., 1:])

        sigma = F.softplus(self.density_head(hidden)[..., 0])
        w = _broadcast_style(w, hidden)
        phi = self.color_head(torch.cat([hidden, w], dim=-1))
        return FieldSample(sigma=sigma, phi=phi)


def _broadcast_style(w: torch.Tensor, hidden: torch.Tensor) -> torch.Tensor:
    if w.dim() == 1:
        return w.expand(*hidden.shape[:-1], w.shape[-1])
    if w.shape[0] != hidden.shape[0] and hidden.dim() > 1:
        raise ShapeMismatchError(f"风格向量批大小 {w.shape[0]} 与点特征批大小 {hidden.shape[0]} 不一致")
    extra = hidden.dim() - w.dim()
    w = w.reshape(w.shape[0], *([1] * extra), w.shape[-1])
    return w.expand(*hidden.shape[:-1], w.shape[-1])


def decode(f_tri: torch.Tensor, w: torch.Tensor, params: FieldDecoder) -> FieldSample:
    """单点解码：f_tri (96,)，w (512,)"""
    if f_tri.dim() != 1:
        raise ShapeMismatchError(f"decode 只接受单个点特征，实际 {tuple(f_tri.shape)}")
    return params(f_tri, w)


def decode_batch(features: torch.Tensor, w: torch.Tensor, params: FieldDecoder) -> FieldSample:
    """批量解码：features (..., 96)，单个或逐批的 w 在点维上广播"""
    return params(features, w)
