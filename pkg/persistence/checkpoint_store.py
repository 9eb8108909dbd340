"""
检查点存储
目录结构：
    <ckpt>/manifest.json          迭代数、配置、配置摘要、优化器参数组、张量索引
    <ckpt>/tensors/000000.ptns    每个参数 / 缓冲区 / 优化器状态张量一个文件
写入先落到临时目录再整体改名，保证检查点要么完整要么不存在。
"""
import json
import logging
import os
import shutil
import uuid
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional

import torch
import torch.nn as nn

from services.tensor_io import read_tensor, write_tensor
from utils.config_loader import config_hash
from utils.errors import CheckpointError, TensorFileError


logger = logging.getLogger('sat2street')

MANIFEST_NAME = 'manifest.json'
TENSOR_DIR = 'tensors'
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """已加载的检查点"""
    iteration: int
    config: Dict[str, Any]
    config_hash: str
    modules: Dict[str, Dict[str, torch.Tensor]] = field(default_factory=dict)
    optimizers: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    path: Optional[str] = None


def _flatten_optimizer(name: str, state_dict: Dict[str, Any], tensors: Dict[str, torch.Tensor]) -> Dict[str, Any]:
    """优化器状态拆成张量文件 + 可 JSON 化的元数据"""
    state_meta = {}
    for pid, entry in state_dict['state'].items():
        meta = {}
        for key, value in entry.items():
            if isinstance(value, torch.Tensor):
                tensor_name = f"optim.{name}.{pid}.{key}"
                tensors[tensor_name] = value
                meta[key] = {'tensor': tensor_name}
            else:
                meta[key] = {'value': value}
        state_meta[str(pid)] = meta
    return {'state': state_meta, 'param_groups': state_dict['param_groups']}


def _unflatten_optimizer(meta: Dict[str, Any], tensors: Mapping[str, torch.Tensor]) -> Dict[str, Any]:
    state = {}
    for pid, entry in meta['state'].items():
        state[int(pid)] = {
            key: tensors[item['tensor']] if 'tensor' in item else item['value']
            for key, item in entry.items()
        }
    param_groups = []
    for group in meta['param_groups']:
        group = dict(group)
        if isinstance(group.get('betas'), list):
            group['betas'] = tuple(group['betas'])
        param_groups.append(group)
    return {'state': state, 'param_groups': param_groups}


def save_checkpoint(path: str, modules: Mapping[str, nn.Module], iteration: int, config: Dict[str, Any],
                    optimizers: Optional[Mapping[str, torch.optim.Optimizer]] = None) -> str:
    """
    保存检查点（原子写入）
    
    Args:
        path: 检查点目录
        modules: 参数组名 -> 模块（generator / mapper / decoder / sky / sr / discriminators）
        iteration: 已完成的迭代数
        config: 完整配置
        optimizers: 优化器名 -> 优化器
        
    Returns:
        str: 检查点目录
    """
    tensors: Dict[str, torch.Tensor] = {}
    module_index: Dict[str, list] = {}
    for group, module in modules.items():
        names = []
        for key, value in module.state_dict().items():
            tensor_name = f"{group}.{key}"
            tensors[tensor_name] = value
            names.append(tensor_name)
        module_index[group] = names

    optimizer_meta = {
        name: _flatten_optimizer(name, opt.state_dict(), tensors)
        for name, opt in (optimizers or {}).items()
    }

    tensor_files = {}
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmp_dir = os.path.join(parent, f".{os.path.basename(path)}.tmp-{uuid.uuid4().hex[:8]}")
    try:
        for i, (tensor_name, tensor) in enumerate(tensors.items()):
            filename = os.path.join(TENSOR_DIR, f"{i:06d}.ptns")
            write_tensor(os.path.join(tmp_dir, filename), tensor)
            tensor_files[tensor_name] = filename

        manifest = {
            'format_version': FORMAT_VERSION,
            'iteration': int(iteration),
            'config': config,
            'config_hash': config_hash(config),
            'modules': module_index,
            'optimizers': optimizer_meta,
            'tensors': tensor_files,
        }
        with open(os.path.join(tmp_dir, MANIFEST_NAME), 'w', encoding='utf-8') as f:
            json.dump(manifest, f, ensure_ascii=False, indent=2)

        if os.path.exists(path):
            stale = f"{tmp_dir}.old"
            os.replace(path, stale)
            os.replace(tmp_dir, path)
            shutil.rmtree(stale, ignore_errors=True)
        else:
            os.replace(tmp_dir, path)
    except (OSError, TensorFileError) as e:
        shutil.rmtree(tmp_dir, ignore_errors=True)
        raise CheckpointError(f"检查点写入失败 {path}: {e}") from e

    logger.info(f"💾 检查点已保存: {path} (iteration={iteration})")
    return path


def load_checkpoint(path: str) -> Checkpoint:
    """
    读取检查点
    
    Args:
        path: 检查点目录
        
    Returns:
        Checkpoint: 模块状态、优化器状态、迭代数与配置
    """
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise CheckpointError(f"检查点清单不存在: {manifest_path}")
    try:
        with open(manifest_path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"检查点清单解析失败 {manifest_path}: {e}") from e
    if manifest.get('format_version') != FORMAT_VERSION:
        raise CheckpointError(f"不支持的检查点格式版本: {manifest.get('format_version')}")

    try:
        tensors = {
            name: read_tensor(os.path.join(path, filename))
            for name, filename in manifest['tensors'].items()
        }
    except TensorFileError as e:
        raise CheckpointError(f"检查点张量损坏 {path}: {e}") from e

    config = manifest['config']
    if config_hash(config) != manifest['config_hash']:
        raise CheckpointError(f"检查点配置摘要不匹配: {path}")

    modules = {}
    for group, names in manifest['modules'].items():
        prefix = f"{group}."
        modules[group] = {name[len(prefix):]: tensors[name] for name in names}
    optimizers = {
        name: _unflatten_optimizer(meta, tensors)
        for name, meta in manifest.get('optimizers', {}).items()
    }
    return Checkpoint(
        iteration=int(manifest['iteration']),
        config=config,
        config_hash=manifest['config_hash'],
        modules=modules,
        optimizers=optimizers,
        path=path,
    )


def restore_modules(checkpoint: Checkpoint, modules: Mapping[str, nn.Module],
                    optimizers: Optional[Mapping[str, torch.optim.Optimizer]] = None):
    """
    将检查点状态写回模块与优化器（参数组必须一一对应）
    
    Args:
        checkpoint: 已加载的检查点
        modules: 参数组名 -> 模块
        optimizers: 优化器名 -> 优化器
    """
    missing = set(modules) - set(checkpoint.modules)
    if missing:
        raise CheckpointError(f"检查点缺少参数组: {sorted(missing)}")
    for group, module in modules.items():
        try:
            module.load_state_dict(checkpoint.modules[group], strict=True)
        except RuntimeError as e:
            raise CheckpointError(f"参数组 {group} 与检查点不匹配: {e}") from e
    for name, opt in (optimizers or {}).items():
        if name not in checkpoint.optimizers:
            raise CheckpointError(f"检查点缺少优化器状态: {name}")
        try:
            opt.load_state_dict(checkpoint.optimizers[name])
        except (ValueError, KeyError) as e:
            raise CheckpointError(f"优化器 {name} 状态与检查点不匹配: {e}") from e
