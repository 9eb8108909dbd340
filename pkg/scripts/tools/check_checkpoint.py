"""
检查检查点：清单信息、参数组规模、张量是否全部有限
"""
import argparse
import os
import sys

import torch

sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from persistence.checkpoint_store import load_checkpoint
from utils.errors import CheckpointError


parser = argparse.ArgumentParser(description='检查检查点完整性')
parser.add_argument('ckpt', help='检查点目录')
args = parser.parse_args()

try:
    checkpoint = load_checkpoint(args.ckpt)
except CheckpointError as e:
    print(f"❌ {e}")
    sys.exit(1)

print(f"检查点: {args.ckpt}")
print(f"  迭代数: {checkpoint.iteration}")
print(f"  配置摘要: {checkpoint.config_hash}")
print(f"  解码器: {checkpoint.config['model']['decoder_variant']}，"
      f"光照策略: {checkpoint.config['train']['illumination_policy']}")

print("\n参数组:")
bad = []
for group, tensors in checkpoint.modules.items():
    count = sum(t.numel() for t in tensors.values())
    print(f"  {group}: {len(tensors)} 个张量，{count} 个元素")
    bad += [f"{group}.{name}" for name, t in tensors.items() if t.is_floating_point() and not torch.isfinite(t).all()]

print("\n优化器:")
for name, state in checkpoint.optimizers.items():
    print(f"  {name}: {len(state['state'])} 个参数有状态，lr={state['param_groups'][0]['lr']}")

if bad:
    print(f"\n❌ 存在非有限值张量: {bad}")
    sys.exit(1)
print("\n✅ 所有张量均为有限值")
