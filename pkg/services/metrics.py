"""
评估指标
PSNR、SSIM（11x11 高斯窗，σ=1.5，灰度按通道均值）、DINO 特征余弦相似度。
图像约定为 [0,1] 浮点。
"""
import math

import torch
import torch.nn.functional as F

from utils.errors import InvalidRangeError, ShapeMismatchError


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """
    PSNR = 10·log10(1 / MSE)
    
    Returns:
        float: 分贝；MSE 为 0 时返回 +inf
    """
    if a.shape != b.shape:
        raise ShapeMismatchError(f"PSNR 输入形状不一致: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float(((a.to(torch.float64) - b.to(torch.float64)) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _to_gray(image: torch.Tensor) -> torch.Tensor:
    image = image.to(torch.float64)
    if image.dim() == 2:
        return image
    if image.dim() == 3:
        return image.mean(dim=0)
    raise ShapeMismatchError(f"SSIM 输入需为 (C,H,W) 或 (H,W): {tuple(image.shape)}")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """归一化二维高斯窗 (size, size)"""
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-coords ** 2 / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: torch.Tensor, b: torch.Tensor) -> float:
    """
    窗口化 SSIM（只取完整窗口位置，对所有窗口求均值）
    
    Args:
        a, b: (C, H, W) 或 (H, W)，取值 [0,1]
        
    Returns:
        float: [-1, 1]
    """
    if a.shape != b.shape:
        raise ShapeMismatchError(f"SSIM 输入形状不一致: {tuple(a.shape)} vs {tuple(b.shape)}")
    x, y = _to_gray(a), _to_gray(b)
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise InvalidRangeError(f"图像尺寸 {tuple(x.shape)} 小于 SSIM 窗口 {SSIM_WINDOW}")

    window = gaussian_window().reshape(1, 1, SSIM_WINDOW, SSIM_WINDOW)
    x = x.reshape(1, 1, *x.shape)
    y = y.reshape(1, 1, *y.shape)
    mu_x = F.conv2d(x, window)
    mu_y = F.conv2d(y, window)
    var_x = F.conv2d(x * x, window) - mu_x ** 2
    var_y = F.conv2d(y * y, window) - mu_y ** 2
    cov = F.conv2d(x * y, window) - mu_x * mu_y
    numerator = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float((numerator / denominator).mean())


def dino_similarity(tokens_a: torch.Tensor, tokens_b: torch.Tensor) -> float:
    """
    对齐 token 的平均余弦相似度 (1/N)·Σ f₁ᵀf₂ / (‖f₁‖‖f₂‖)
    
    Args:
        tokens_a, tokens_b: (N, D) 特征（由外部模型提取）
    """
    if tokens_a.shape != tokens_b.shape or tokens_a.dim() != 2:
        raise ShapeMismatchError(f"token 形状需一致且为 (N,D): {tuple(tokens_a.shape)} vs {tuple(tokens_b.shape)}")
    a = tokens_a.to(torch.float64)
    b = tokens_b.to(torch.float64)
    norm_a = a.norm(dim=1)
    norm_b = b.norm(dim=1)
    if bool((norm_a == 0).any()) or bool((norm_b == 0).any()):
        raise InvalidRangeError("存在零范数 token，余弦相似度无定义")
    return float(((a * b).sum(dim=1) / (norm_a * norm_b)).mean())
