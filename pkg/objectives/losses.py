"""
训练目标
L_opa（非天空不透明度 BCE）、L_sky（天空掩码 L1）、L_str / L_sat（L1 + 感知距离）、
非饱和 GAN 损失（街景双判别 + 卫星）与 R1，以及加权总损失。
所有范数取均值，λ 与分辨率无关。
"""
import math
from dataclasses import dataclass, asdict, fields
from typing import Any, Callable, Dict, Optional, Tuple

import torch
import torch.nn.functional as F

from utils.errors import NonFiniteLossError, ShapeMismatchError, ConfigError
from .perceptual import PerceptualDistance


BCE_EPS = 1e-6

# 总损失各项名称 -> 对应权重字段
TERM_WEIGHTS = {
    'sat': 'lambda_sat',
    'str': 'lambda_str',
    'sky': 'lambda_sky',
    'opa': 'lambda_opa',
    'gan_str': 'lambda_d_str',
    'gan_sat': 'lambda_d_sat',
}


@dataclass
class LossWeights:
    """损失权重（默认值取自论文实现细节）"""
    lambda_d_str: float = 1.0
    lambda_d_sat: float = 1.0
    lambda_sat: float = 30.0
    lambda_str: float = 10.0
    lambda_sky: float = 10.0
    lambda_opa: float = 25.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not value >= 0:
                raise ConfigError(f"损失权重 {f.name} 必须非负: {value}")

    @classmethod
    def from_config(cls, loss_cfg: Dict[str, Any]) -> 'LossWeights':
        names = {f.name for f in fields(cls)}
        return cls(**{k: float(v) for k, v in loss_cfg.items() if k in names})

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _check_shapes(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} 形状不匹配: {tuple(a.shape)} vs {tuple(b.shape)}")


def opacity_loss(opacity: torch.Tensor, sky_mask: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    """
    L_opa = BCE(Ô_grd, 1 − M_sky)，Ô 钳制到 [ε, 1−ε]，对像素取均值
    
    Args:
        opacity: 不透明度图
        sky_mask: 同形状天空掩码（1=天空）
    """
    _check_shapes(opacity, sky_mask, "不透明度与天空掩码")
    target = 1.0 - sky_mask.to(opacity.dtype)
    clamped = opacity.clamp(eps, 1.0 - eps)
    return -(target * torch.log(clamped) + (1.0 - target) * torch.log(1.0 - clamped)).mean()


def sky_loss(sky_image: torch.Tensor, street_gt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """
    L_sky：仅在天空像素上的 L1，除以 (3 × 天空像素数)；无天空像素时为 0
    
    Args:
        sky_image: (B, 3, H, W) 或 (3, H, W) 天空颜色
        street_gt: 同形状真实街景
        mask: (B, 1, H, W) 或 (H, W) 等可广播到图像的天空掩码
    """
    _check_shapes(sky_image, street_gt, "天空图与街景真值")
    mask = mask.to(sky_image.dtype)
    if mask.dim() == sky_image.dim() - 1:
        mask = mask.unsqueeze(-3)
    if mask.shape[-2:] != sky_image.shape[-2:]:
        raise ShapeMismatchError(f"掩码 {tuple(mask.shape)} 与图像 {tuple(sky_image.shape)} 空间尺寸不匹配")
    mask = mask.expand_as(sky_image)
    count = mask.sum()
    if float(count) == 0.0:
        return sky_image.new_zeros(())
    return ((sky_image - street_gt).abs() * mask).sum() / count


def reconstruction_loss(pred: torch.Tensor, gt: torch.Tensor,
                        perceptual: Optional[PerceptualDistance] = None) -> torch.Tensor:
    """L1（均值）+ 感知距离；街景（超分图 vs 真值）与卫星（裁剪渲染 vs 对应裁剪）共用"""
    _check_shapes(pred, gt, "重建预测与真值")
    loss = (pred - gt).abs().mean()
    if perceptual is not None:
        loss = loss + perceptual(pred, gt)
    return loss


# ==================== 对抗损失 ====================

def make_street_pair(hi_res: torch.Tensor, raw: torch.Tensor) -> torch.Tensor:
    """双判别输入：最终图 ‖ 双线性上采样到同分辨率的原始图（6通道）"""
    raw_up = F.interpolate(raw, size=hi_res.shape[-2:], mode='bilinear', align_corners=False)
    return torch.cat([hi_res, raw_up], dim=1)


def _check_channels(d: Callable, x: torch.Tensor):
    expected = getattr(d, 'in_channels', None)
    if expected is not None and x.shape[1] != expected:
        raise ShapeMismatchError(f"判别器期望 {expected} 通道，实际 {x.shape[1]}")


def generator_adversarial_loss(d: Callable, fake: torch.Tensor) -> torch.Tensor:
    """softplus(−D(fake))"""
    _check_channels(d, fake)
    return F.softplus(-d(fake)).mean()


def discriminator_adversarial_loss(d: Callable, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """softplus(D(fake)) + softplus(−D(real))，fake 不回传到生成器"""
    _check_channels(d, real)
    _check_channels(d, fake)
    return F.softplus(d(fake.detach())).mean() + F.softplus(-d(real)).mean()


def r1_penalty(d: Callable, real: torch.Tensor, gamma: float) -> torch.Tensor:
    """R1 = (γ/2)·E‖∇_x D(x)‖²，仅在真实样本上；保留计算图以便对判别器参数求导"""
    _check_channels(d, real)
    real = real.detach().requires_grad_(True)
    logits = d(real)
    gradients, = torch.autograd.grad(outputs=logits.sum(), inputs=real, create_graph=True)
    return 0.5 * gamma * gradients.reshape(real.shape[0], -1).pow(2).sum(dim=1).mean()


def gan_losses(d: Callable, real_pair: torch.Tensor, fake_pair: torch.Tensor,
               r1_gamma: float) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    非饱和 GAN 损失
    
    Returns:
        (g_loss, d_loss, r1_penalty)
    """
    g_loss = generator_adversarial_loss(d, fake_pair)
    d_loss = discriminator_adversarial_loss(d, real_pair, fake_pair)
    r1 = r1_penalty(d, real_pair, r1_gamma)
    return g_loss, d_loss, r1


# ==================== 总损失 ====================

def total_loss(parts: Dict[str, torch.Tensor], weights: LossWeights):
    """
    L_total = λ_sat·L_sat + λ_str·L_str + λ_sky·L_sky + λ_opa·L_opa + λ_Dstr·L_Dstr + λ_Dsat·L_Dsat
    
    权重为 0 或缺失的项不进入计算图（梯度贡献严格为零）。
    
    Args:
        parts: 项名（sat/str/sky/opa/gan_str/gan_sat）-> 标量张量
        weights: 损失权重
        
    Returns:
        (total, breakdown): breakdown 含各项原值、加权值以及 recon / gan / total 汇总
    """
    unknown = set(parts) - set(TERM_WEIGHTS)
    if unknown:
        raise ConfigError(f"未知损失项: {sorted(unknown)}")
    for name, value in parts.items():
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v)

    total = None
    breakdown: Dict[str, float] = {}
    recon = 0.0
    gan = 0.0
    for name, weight_name in TERM_WEIGHTS.items():
        if name not in parts:
            continue
        weight = getattr(weights, weight_name)
        value = parts[name]
        raw = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        breakdown[name] = raw
        breakdown[f'w_{name}'] = weight * raw
        if weight == 0:
            continue
        term = weight * value
        total = term if total is None else total + term
        if name in ('sat', 'str', 'sky'):
            recon += weight * raw
        elif name.startswith('gan'):
            gan += weight * raw

    if total is None:
        reference = next((v for v in parts.values() if isinstance(v, torch.Tensor)), None)
        total = reference.new_zeros(()) if reference is not None else torch.zeros(())
    breakdown['recon'] = recon
    breakdown['gan'] = gan
    breakdown['total'] = float(total.detach()) if isinstance(total, torch.Tensor) else float(total)
    return total, breakdown
