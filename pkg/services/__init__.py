"""服务层模块：张量文件、图像读写、数据集、评估指标与报告"""
from .tensor_io import MAGIC, DTYPE_TAGS, encode_tensor, decode_tensor, write_tensor, read_tensor
from .image_io import load_image, load_mask, save_image, save_mask, to_uint8
from .dataset_provider import (
    MANIFEST_NAME,
    META_NAME,
    MANIFEST_COLUMNS,
    TRAJECTORY_COLUMNS,
    SceneSample,
    LoadedSample,
    SceneLoader,
    load_dataset,
    validate_sample,
    load_meta,
    apply_dataset_meta,
    load_trajectory,
    load_sample,
)
from .metrics import psnr, ssim, dino_similarity, gaussian_window
from .evaluation import REPORT_COLUMNS, evaluate_samples

__all__ = [
    'MAGIC', 'DTYPE_TAGS', 'encode_tensor', 'decode_tensor', 'write_tensor', 'read_tensor',
    'load_image', 'load_mask', 'save_image', 'save_mask', 'to_uint8',
    'MANIFEST_NAME', 'META_NAME', 'MANIFEST_COLUMNS', 'TRAJECTORY_COLUMNS',
    'SceneSample', 'LoadedSample', 'SceneLoader', 'load_dataset', 'validate_sample',
    'load_meta', 'apply_dataset_meta', 'load_trajectory', 'load_sample',
    'psnr', 'ssim', 'dino_similarity', 'gaussian_window',
    'REPORT_COLUMNS', 'evaluate_samples',
]
