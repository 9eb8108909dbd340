"""
配置加载
优先读取 config.yaml，找不到时回退到 config.json（与原项目启动流程一致）
"""
import copy
import hashlib
import json
import math
import os
from typing import Any, Dict, Optional

import yaml

from .errors import ConfigError


# 桌面规模默认配置（与论文规模共用同一套代码路径，仅数值不同）
DEFAULT_CONFIG: Dict[str, Any] = {
    'scene': {
        'sat_size': 64,            # 卫星图边长（像素）
        'gsd': 1.0,                # 地面采样距离（米/像素）
        'z_min': -2.0,             # 场景框底（米）
        'z_max': 14.0,             # 场景框顶（米）
        'camera_height': 2.0,      # 街景相机统一高度（米）
    },
    'camera': {
        'pano_height': 32,         # 体渲染分辨率（论文为 64x256）
        'pano_width': 128,
        'elevation_min': -math.pi / 4,
        'elevation_max': math.pi / 4,
        'mapping': 'linear',       # linear | tan
        'n_samples': 32,
        't_near': 0.1,
        't_far': None,             # None -> 场景框对角线
        'sat_samples': 32,
    },
    'model': {
        'plane_channels': 32,
        'plane_resolution': 64,
        'generator_depth': 4,
        'generator_width': 32,
        'decoder_variant': 'adaptive',   # adaptive | vanilla
        'decoder_hidden': 64,
        'style_dim': 512,
        'mapper_layers': 8,
        'sky_blocks': 3,
        'sky_width': 32,
        'sr_width': 64,
        'disc_width': 32,
        'disc_depth': 3,
    },
    'render': {
        'chunk_size': None,        # 按光线分块渲染，None 表示不分块
        'jitter': False,           # 训练时分层抖动采样
        'zero_outside': True,      # 场景框外点密度置零
        'sat_downscale': 4,        # 卫星视角监督使用 1/4 分辨率
    },
    'loss': {
        'lambda_d_str': 1.0,
        'lambda_d_sat': 1.0,
        'lambda_sat': 30.0,
        'lambda_str': 10.0,
        'lambda_sky': 10.0,
        'lambda_opa': 25.0,
        'r1_gamma': 1.0,
    },
    'train': {
        'iterations': 500,
        'batch_size': 1,
        'lr_generator': 2e-3,
        'lr_discriminator': 2e-3,
        'seed': 0,
        'decoder_variant': None,   # None -> 使用 model.decoder_variant
        'sky_branch': True,
        'use_opacity_loss': True,
        'use_sky_loss': True,
        'use_sat_loss': True,
        'use_gan': True,
        'illumination_policy': 'real',   # real | random | null
        'log_interval': 10,
        'checkpoint_interval': 250,
        'validation_interval': 250,
    },
    'data': {
        'root': 'data/synthetic',
        'n_scenes': 1,
        'n_boxes': 4,
        'panos_per_scene': 1,
    },
    'output': {
        'run_dir': 'runs/default',
        'log_file': 'logs/train.log',
        'history_db': 'data/run_history.db',
        'enable_history': True,
    },
}


def merge_config(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """
    深度合并配置（override 覆盖 base，返回新字典）
    
    Args:
        base: 基础配置
        override: 覆盖项
        
    Returns:
        Dict: 合并后的配置
    """
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_file(path: str) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        if path.endswith(('.yaml', '.yml')):
            data = yaml.safe_load(f)
        else:
            data = json.load(f)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件顶层必须是映射: {path}")
    return data


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """
    加载配置（优先yaml，fallback到json），并与默认配置合并
    
    Args:
        path: 配置文件或所在目录；None 时在当前目录查找 config.yaml / config.json
        
    Returns:
        Dict: 完整配置
    """
    candidates = []
    if path is None or os.path.isdir(path):
        base_dir = path or os.getcwd()
        candidates = [os.path.join(base_dir, 'config.yaml'), os.path.join(base_dir, 'config.json')]
    else:
        candidates = [path]
    
    for candidate in candidates:
        if os.path.exists(candidate):
            try:
                data = _read_file(candidate)
            except (yaml.YAMLError, json.JSONDecodeError) as e:
                raise ConfigError(f"配置解析失败 {candidate}: {e}") from e
            unknown = set(data) - set(DEFAULT_CONFIG)
            if unknown:
                raise ConfigError(f"未知配置段: {sorted(unknown)}")
            return merge_config(DEFAULT_CONFIG, data)
    
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    raise ConfigError(f"配置文件不存在: {path}")


def config_hash(config: Dict[str, Any]) -> str:
    """配置摘要（写入检查点清单，用于恢复时校验）"""
    canonical = json.dumps(config, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]
