"""PNG 读写：图像统一为 [0,1] 浮点 (C, H, W)，掩码为 (H, W)"""
import os
from typing import Union

import numpy as np
import torch
from PIL import Image

from utils.errors import DatasetError


def load_image(path: str, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """
    读取 RGB 图像
    
    Returns:
        torch.Tensor: (3, H, W)，取值 [0,1]
    """
    if not os.path.exists(path):
        raise DatasetError(f"图像文件不存在: {path}")
    try:
        with Image.open(path) as img:
            array = np.asarray(img.convert('RGB'), dtype=np.uint8)
    except OSError as e:
        raise DatasetError(f"图像解码失败 {path}: {e}") from e
    return torch.from_numpy(array.copy()).permute(2, 0, 1).to(dtype) / 255.0


def load_mask(path: str, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """读取单通道掩码 -> (H, W)，取值 [0,1]（二值化由 binarize_mask 负责）"""
    if not os.path.exists(path):
        raise DatasetError(f"掩码文件不存在: {path}")
    try:
        with Image.open(path) as img:
            array = np.asarray(img.convert('L'), dtype=np.uint8)
    except OSError as e:
        raise DatasetError(f"掩码解码失败 {path}: {e}") from e
    return torch.from_numpy(array.copy()).to(dtype) / 255.0


def to_uint8(image: Union[torch.Tensor, np.ndarray]) -> np.ndarray:
    """[0,1] 浮点 -> uint8（钳制后四舍五入）"""
    tensor = torch.as_tensor(image).detach().cpu().to(torch.float64)
    return (tensor.clamp(0.0, 1.0) * 255.0).round().to(torch.uint8).numpy()


def save_image(path: str, image: Union[torch.Tensor, np.ndarray]):
    """
    保存图像为 PNG
    
    Args:
        path: 输出路径
        image: (3, H, W) / (1, H, W) / (H, W)，取值 [0,1]；批维为 1 时自动去掉
    """
    array = to_uint8(image)
    if array.ndim == 4 and array.shape[0] == 1:
        array = array[0]
    if array.ndim == 3:
        array = array[0] if array.shape[0] == 1 else np.transpose(array, (1, 2, 0))
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(array)).save(path)


def save_mask(path: str, mask: Union[torch.Tensor, np.ndarray]):
    """保存二值掩码（1 -> 255）"""
    save_image(path, torch.as_tensor(mask).to(torch.float64))
