"""
天空光照建模
从街景全景图的天空像素统计 R/G/B 直方图（各90个bin）得到 270 维光照特征 f_ill，
再经 8 层全连接映射网络得到 512 维风格向量 w_ill。
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn

from utils.errors import ShapeMismatchError, InvalidRangeError


logger = logging.getLogger('sat2street')

N_BINS = 90
FEATURE_DIM = 3 * N_BINS
STYLE_DIM = 512

PROVENANCE_REAL = 'real'
PROVENANCE_RANDOM = 'random'
PROVENANCE_NULL = 'null'


@dataclass
class IlluminationFeature:
    """光照特征：values (270,) 或 (B, 270)；provenance 标记来源"""
    values: torch.Tensor
    provenance: str = PROVENANCE_REAL


@dataclass
class StyleVector:
    """风格向量：values (512,) 或 (B, 512)；null 风格恒为零向量"""
    values: torch.Tensor
    provenance: str = PROVENANCE_REAL


def binarize_mask(mask: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
    """
    天空掩码二值化（1=天空，0=地面）
    
    非 {0,1} 的灰度掩码以 0.5 为阈值二值化并给出警告。
    """
    mask = torch.as_tensor(np.asarray(mask) if not isinstance(mask, torch.Tensor) else mask)
    mask = mask.to(torch.float64)
    if mask.dim() == 3 and mask.shape[0] == 1:
        mask = mask[0]
    if not bool(((mask == 0) | (mask == 1)).all()):
        logger.warning("⚠️ 天空掩码不是严格二值，按 0.5 阈值二值化")
        mask = (mask >= 0.5).to(torch.float64)
    return mask


def histogram_bins(values: torch.Tensor) -> torch.Tensor:
    """强度 [0,255] -> bin 索引：第 k 个 bin 覆盖 [k*256/90, (k+1)*256/90)，255 落入最后一个 bin"""
    values = values.clamp(0.0, 255.0)
    return torch.floor(values * N_BINS / 256.0).long().clamp(max=N_BINS - 1)


def extract_illumination(pano: Union[np.ndarray, torch.Tensor],
                         mask: Union[np.ndarray, torch.Tensor]) -> IlluminationFeature:
    """
    提取天空光照直方图特征
    
    Args:
        pano: (3, H, W) 全景图，取值 [0,255]
        mask: (H, W) 或 (1, H, W) 天空掩码
        
    Returns:
        IlluminationFeature: 270 维，按 R-G-B 顺序拼接；无天空像素时为零向量
    """
    pano = torch.as_tensor(np.asarray(pano) if not isinstance(pano, torch.Tensor) else pano)
    pano = pano.to(torch.float64)
    sky = binarize_mask(mask)
    if pano.dim() != 3 or pano.shape[0] != 3 or pano.shape[1:] != sky.shape:
        raise ShapeMismatchError(f"全景图 {tuple(pano.shape)} 与掩码 {tuple(sky.shape)} 形状不匹配")

    selected = sky.reshape(-1) > 0.5
    count = int(selected.sum())
    if count == 0:
        return IlluminationFeature(values=torch.zeros(FEATURE_DIM, dtype=torch.get_default_dtype()))

    blocks = []
    for channel in range(3):
        bins = histogram_bins(pano[channel].reshape(-1)[selected])
        hist = torch.bincount(bins, minlength=N_BINS).to(torch.float64)
        blocks.append(hist / count)
    values = torch.cat(blocks).to(torch.get_default_dtype())
    return IlluminationFeature(values=values)


class IlluminationMapper(nn.Module):
    """
    光照映射网络 E_ill：8 层全连接（270 -> 512 -> ... -> 512），层间 LeakyReLU
    
    Args:
        in_dim: 输入维度（270）
        style_dim: 输出/隐层维度（512）
        n_layers: 全连接层数
        zero_init_head: 最后一层权重和偏置置零
    """

    def __init__(self, in_dim: int = FEATURE_DIM, style_dim: int = STYLE_DIM,
                 n_layers: int = 8, zero_init_head: bool = False):
        super().__init__()
        if n_layers < 1:
            raise InvalidRangeError(f"映射网络层数至少为1: {n_layers}")
        self.in_dim = in_dim
        self.style_dim = style_dim
        dims = [in_dim] + [style_dim] * n_layers
        self.layers = nn.ModuleList([nn.Linear(dims[i], dims[i + 1]) for i in range(n_layers)])
        self.activation = nn.LeakyReLU(0.2)
        if zero_init_head:
            nn.init.zeros_(self.layers[-1].weight)
            nn.init.zeros_(self.layers[-1].bias)

    def forward(self, f_ill: torch.Tensor) -> torch.Tensor:
        if f_ill.shape[-1] != self.in_dim:
            raise ShapeMismatchError(f"光照特征维度应为 {self.in_dim}，实际 {f_ill.shape[-1]}")
        h = f_ill
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = self.activation(h)
        return h


def map_illumination(f: IlluminationFeature, mapper: IlluminationMapper) -> StyleVector:
    """光照特征 -> 风格向量（来源标记沿用特征的来源）"""
    return StyleVector(values=mapper(f.values), provenance=f.provenance)


def null_style(batch_size: Optional[int] = None, style_dim: int = STYLE_DIM,
               dtype: Optional[torch.dtype] = None, device=None) -> StyleVector:
    """null 风格 w0 = 0（卫星视角渲染使用）"""
    shape = (style_dim,) if batch_size is None else (batch_size, style_dim)
    values = torch.zeros(shape, dtype=dtype or torch.get_default_dtype(), device=device)
    return StyleVector(values=values, provenance=PROVENANCE_NULL)


def sample_training_illumination(pool: Sequence[IlluminationFeature], rng_seed: int) -> IlluminationFeature:
    """
    从训练集光照池中均匀抽取一个（同一种子结果可复现）
    
    Args:
        pool: 光照特征集合
        rng_seed: 随机种子
        
    Returns:
        IlluminationFeature: provenance = random
    """
    if len(pool) == 0:
        raise InvalidRangeError("光照池为空，无法抽样")
    index = int(np.random.default_rng(rng_seed).integers(len(pool)))
    return IlluminationFeature(values=pool[index].values, provenance=PROVENANCE_RANDOM)
