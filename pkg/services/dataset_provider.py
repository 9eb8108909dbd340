"""
数据集读取
数据集目录：manifest.csv（表头 sat,street,mask,east_m,north_m,heading_rad，路径相对数据集根目录）
+ 可选 meta.json（gsd、camera_height 等场景级参数）。
一张卫星图对应多张全景时按全景展开为多条样本，共享卫星图路径。
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import pandas as pd
import torch

from models.illumination import IlluminationFeature, binarize_mask, extract_illumination
from utils.config_loader import merge_config
from utils.errors import DatasetError
from .image_io import load_image, load_mask


logger = logging.getLogger('sat2street')

MANIFEST_NAME = 'manifest.csv'
META_NAME = 'meta.json'
MANIFEST_COLUMNS = ['sat', 'street', 'mask', 'east_m', 'north_m', 'heading_rad']
TRAJECTORY_COLUMNS = ['east_m', 'north_m', 'heading_rad']
META_KEYS = ('gsd', 'camera_height', 'z_min', 'z_max', 'sat_size')


@dataclass
class SceneSample:
    """一条卫星-街景样本（路径均为绝对路径）"""
    name: str
    sat: str
    street: str
    mask: str
    east_m: float
    north_m: float
    heading_rad: float
    line: int = 0


@dataclass
class LoadedSample:
    """解码后的样本：sat (3,S,S)、street (3,H,W)、mask (H,W)、光照特征"""
    sample: SceneSample
    sat: torch.Tensor
    street: torch.Tensor
    mask: torch.Tensor
    illumination: IlluminationFeature


def _read_manifest(path: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=MANIFEST_COLUMNS)
    except pd.errors.ParserError as e:
        raise DatasetError(f"清单格式错误 {path}: {e}") from e
    missing = [c for c in MANIFEST_COLUMNS if c not in df.columns]
    if missing:
        raise DatasetError(f"清单缺少列 {missing}: {path}")
    return df


def _parse_row(row: pd.Series, line: int, root: str) -> SceneSample:
    problems = []
    paths = {}
    for key in ('sat', 'street', 'mask'):
        value = str(row[key]).strip()
        if not value:
            problems.append(f"{key} 为空")
        paths[key] = os.path.join(root, value)
    numbers = {}
    for key in TRAJECTORY_COLUMNS:
        try:
            numbers[key] = float(row[key])
        except (TypeError, ValueError):
            problems.append(f"{key}={row[key]!r} 不是数值")
    if problems:
        raise DatasetError(f"第 {line} 行: " + "; ".join(problems))
    name = os.path.splitext(os.path.basename(paths['street']))[0]
    return SceneSample(name=name, line=line, **paths, **numbers)


def validate_sample(sample: SceneSample):
    """文件存在、可解码，掩码与街景同尺寸"""
    for key in ('sat', 'street', 'mask'):
        if not os.path.exists(getattr(sample, key)):
            raise DatasetError(f"样本 {sample.name}（第 {sample.line} 行）: 文件不存在 {getattr(sample, key)}")
    street = load_image(sample.street)
    mask = load_mask(sample.mask)
    if tuple(mask.shape) != tuple(street.shape[-2:]):
        raise DatasetError(
            f"样本 {sample.name}: 掩码尺寸 {tuple(mask.shape)} 与街景尺寸 {tuple(street.shape[-2:])} 不一致"
        )
    sat = load_image(sample.sat)
    if sat.shape[-1] != sat.shape[-2]:
        raise DatasetError(f"样本 {sample.name}: 卫星图不是正方形 {tuple(sat.shape[-2:])}")


def load_dataset(root: str, validate: bool = True) -> List[SceneSample]:
    """
    读取并校验数据集清单
    
    Args:
        root: 数据集根目录
        validate: 是否解码图像检查尺寸
        
    Returns:
        List[SceneSample]: 按清单顺序排列的样本
    """
    manifest = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(manifest):
        raise DatasetError(f"清单文件不存在: {manifest}")
    df = _read_manifest(manifest)
    if df.empty:
        logger.warning(f"⚠️ 数据集清单为空: {manifest}")
        return []

    samples, errors = [], []
    for i, (_, row) in enumerate(df.iterrows()):
        line = i + 2  # 表头占第1行
        try:
            samples.append(_parse_row(row, line, root))
        except DatasetError as e:
            errors.append(str(e))
    if errors:
        raise DatasetError(f"清单 {manifest} 存在格式错误:\n" + "\n".join(errors))

    if validate:
        for sample in samples:
            validate_sample(sample)
    logger.info(f"✅ 加载数据集 {root}: {len(samples)} 条样本")
    return samples


def load_meta(root: str) -> Dict[str, Any]:
    """读取 meta.json（不存在时返回空字典）"""
    path = os.path.join(root, META_NAME)
    if not os.path.exists(path):
        return {}
    try:
        with open(path, 'r', encoding='utf-8') as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetError(f"meta.json 解析失败 {path}: {e}") from e
    return {k: meta[k] for k in META_KEYS if k in meta}


def apply_dataset_meta(config: Dict[str, Any], root: str) -> Dict[str, Any]:
    """用数据集 meta.json 覆盖配置中的场景参数"""
    meta = load_meta(root)
    if not meta:
        return config
    logger.info(f"📐 使用数据集场景参数: {meta}")
    return merge_config(config, {'scene': meta})


def load_trajectory(path: str) -> pd.DataFrame:
    """读取相机轨迹 CSV（表头 east_m,north_m,heading_rad）"""
    if not os.path.exists(path):
        raise DatasetError(f"轨迹文件不存在: {path}")
    try:
        df = pd.read_csv(path, skipinitialspace=True)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise DatasetError(f"轨迹文件格式错误 {path}: {e}") from e
    missing = [c for c in TRAJECTORY_COLUMNS if c not in df.columns]
    if missing:
        raise DatasetError(f"轨迹文件缺少列 {missing}: {path}")
    try:
        return df[TRAJECTORY_COLUMNS].astype(float)
    except ValueError as e:
        raise DatasetError(f"轨迹文件包含非数值: {path}: {e}") from e


def load_sample(sample: SceneSample, dtype: torch.dtype = torch.float32) -> LoadedSample:
    """解码样本并计算光照特征（直方图在 [0,255] 强度上统计）"""
    sat = load_image(sample.sat, dtype)
    street = load_image(sample.street, dtype)
    mask = load_mask(sample.mask, dtype)
    if tuple(mask.shape) != tuple(street.shape[-2:]):
        raise DatasetError(f"样本 {sample.name}: 掩码尺寸与街景尺寸不一致")
    mask = binarize_mask(mask).to(dtype)
    feature = extract_illumination(street.to(torch.float64) * 255.0, mask)
    feature.values = feature.values.to(dtype)
    return LoadedSample(sample=sample, sat=sat, street=street, mask=mask, illumination=feature)


class SceneLoader:
    """
    带缓存的样本加载器
    
    Args:
        samples: 样本列表
        dtype: 张量类型
        cache: 是否缓存已解码样本
    """

    def __init__(self, samples: Sequence[SceneSample], dtype: torch.dtype = torch.float32, cache: bool = True):
        self.samples = list(samples)
        self.dtype = dtype
        self.cache = cache
        self._cache: Dict[int, LoadedSample] = {}

    def __len__(self) -> int:
        return len(self.samples)

    def get(self, index: int) -> LoadedSample:
        if index in self._cache:
            return self._cache[index]
        loaded = load_sample(self.samples[index], self.dtype)
        if self.cache:
            self._cache[index] = loaded
        return loaded

    def illumination_pool(self) -> List[IlluminationFeature]:
        """训练集全部光照特征（random 策略的抽样池）"""
        return [self.get(i).illumination for i in range(len(self))]

    def batch(self, indices: Sequence[int]) -> Dict[str, Any]:
        """
        按索引组装批次
        
        Returns:
            Dict: sat (B,3,S,S)、street (B,3,H,W)、mask (B,1,H,W)、illumination (B,270)、samples
        """
        items = [self.get(int(i)) for i in indices]
        shapes = {tuple(it.street.shape) for it in items}
        if len(shapes) != 1:
            raise DatasetError(f"批内街景尺寸不一致: {sorted(shapes)}")
        return {
            'sat': torch.stack([it.sat for it in items]),
            'street': torch.stack([it.street for it in items]),
            'mask': torch.stack([it.mask for it in items]).unsqueeze(1),
            'illumination': torch.stack([it.illumination.values for it in items]),
            'samples': [it.sample for it in items],
        }


