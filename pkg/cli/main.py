"""
命令行入口
    train <config>                         训练（可 --resume 检查点）
    render-pano <ckpt> [config]            渲染单张全景（--maps 另存深度/不透明度/特征图）
    render-video <ckpt> <trajectory.csv>   按轨迹逐帧渲染（整段使用同一光照）
    render-sat <ckpt>                      渲染卫星视角（--maps 同上）
    extract-illumination <pano> <mask>     提取 270 维光照特征
    make-synthetic <config>                生成合成方块数据集
    eval <ckpt> <dataset>                  评估并输出报告 CSV（random 光照取自训练集）
类型化错误返回 1，参数错误返回 2。
"""
import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Tuple

import torch

from models.illumination import FEATURE_DIM, extract_illumination
from persistence.checkpoint_store import load_checkpoint, restore_modules
from render.volume_renderer import RenderOutput
from services.dataset_provider import (
    SceneLoader,
    apply_dataset_meta,
    load_dataset,
    load_sample,
    load_trajectory,
)
from services.evaluation import evaluate_samples
from services.image_io import load_image, load_mask, save_image
from services.tensor_io import read_tensor, write_tensor
from synthetic.box_scene import make_synthetic_dataset
from training.config import TrainConfig
from training.model import Sat2StreetModel
from training.trainer import fit
from utils.config_loader import load_config
from utils.errors import ConfigError, DatasetError, Sat2StreetError
from utils.logger import setup_logger


logger = logging.getLogger('sat2street')


# ==================== 公共辅助 ====================

def load_model(ckpt_path: str) -> Tuple[Sat2StreetModel, Dict[str, Any]]:
    """由检查点恢复生成器侧模型（结构参数取自检查点内保存的配置）"""
    checkpoint = load_checkpoint(ckpt_path)
    config = checkpoint.config
    train_cfg = TrainConfig.from_dict(config)
    model = Sat2StreetModel(config, train_cfg.decoder_variant, train_cfg.sky_branch)
    dtype = next(iter(checkpoint.modules['decoder'].values())).dtype
    model = model.to(dtype)
    restore_modules(checkpoint, model.groups())
    model.eval()
    return model, config


def _dataset_root(config: Dict[str, Any], override: Optional[str] = None) -> str:
    return override or config['data']['root']


def _resolve_satellite(model: Sat2StreetModel, config: Dict[str, Any], sat_path: Optional[str]) -> torch.Tensor:
    """--sat 指定的卫星图；未指定时取数据集第一个样本的卫星图"""
    dtype = next(model.parameters()).dtype
    if sat_path:
        return load_image(sat_path, dtype)
    samples = load_dataset(_dataset_root(config), validate=False)
    if not samples:
        raise DatasetError("未指定 --sat 且数据集为空")
    return load_image(samples[0].sat, dtype)


def _resolve_style(model: Sat2StreetModel, config: Dict[str, Any], illum: str, seed: int,
                   dataset_root: Optional[str] = None):
    """--illum：f_ill 张量文件路径 | random | null"""
    if illum == 'null':
        return model.style('null')
    if illum == 'random':
        samples = load_dataset(_dataset_root(config, dataset_root), validate=False)
        loader = SceneLoader(samples, dtype=next(model.parameters()).dtype)
        return model.style('random', pool=loader.illumination_pool(), seed=seed)
    values = read_tensor(illum)
    if values.shape[-1] != FEATURE_DIM:
        raise ConfigError(f"光照特征文件维度应为 {FEATURE_DIM}: {illum}")
    return model.style('real', illumination=values)


def _write_maps(directory: str, render: RenderOutput):
    """将深度 / 不透明度 / 特征图写为 PTNS：depth (H,W) 米、opacity (H,W)、feature (32,H,W)"""
    os.makedirs(directory, exist_ok=True)
    maps = {
        'depth': render.depth[0, 0],
        'opacity': render.opacity[0, 0],
        'feature': render.feature[0],
    }
    for name, tensor in maps.items():
        write_tensor(os.path.join(directory, f"{name}.ptns"), tensor.to(torch.float32))
    logger.info(f"💾 深度/不透明度/特征图已写入: {directory}")


# ==================== 子命令 ====================

def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.run_dir:
        config['output']['run_dir'] = args.run_dir
    root = config['data']['root']
    config = apply_dataset_meta(config, root)
    loader = SceneLoader(load_dataset(root))
    result = fit(config, loader, resume_from=args.resume)
    if result.checkpoint_path:
        print(f"✅ 检查点: {result.checkpoint_path}")
    return 0


@torch.no_grad()
def cmd_render_pano(args) -> int:
    model, config = load_model(args.ckpt)
    if args.config:
        config = dict(config, data=load_config(args.config)['data'])
    sat = _resolve_satellite(model, config, args.sat)
    planes = model.encode(sat)
    w = _resolve_style(model, config, args.illum, args.seed)
    cams = model.cameras([(args.position[0], args.position[1], args.heading)])
    street = model.render_street(planes, w, cams)
    save_image(args.output, street.hi_res[0])
    if args.maps:
        _write_maps(args.maps, street.ground)
    print(f"✅ 全景已保存: {args.output}")
    return 0


@torch.no_grad()
def cmd_render_video(args) -> int:
    model, config = load_model(args.ckpt)
    trajectory = load_trajectory(args.trajectory)
    sat = _resolve_satellite(model, config, args.sat)
    planes = model.encode(sat)
    w = _resolve_style(model, config, args.illum, args.seed)
    os.makedirs(args.output, exist_ok=True)
    for i, row in enumerate(trajectory.itertuples(index=False)):
        cams = model.cameras([(row.east_m, row.north_m, row.heading_rad)])
        street = model.render_street(planes, w, cams)
        save_image(os.path.join(args.output, f"frame_{i:05d}.png"), street.hi_res[0])
    print(f"✅ 已渲染 {len(trajectory)} 帧: {args.output}")
    return 0


@torch.no_grad()
def cmd_render_sat(args) -> int:
    model, config = load_model(args.ckpt)
    sat = _resolve_satellite(model, config, args.sat)
    render = model.render_satellite(model.encode(sat), downscale=args.downscale)
    save_image(args.output, render.raw_color[0])
    if args.maps:
        _write_maps(args.maps, render)
    print(f"✅ 卫星视角已保存: {args.output}")
    return 0


def cmd_extract_illumination(args) -> int:
    pano = load_image(args.pano, torch.float64) * 255.0
    mask = load_mask(args.mask, torch.float64)
    feature = extract_illumination(pano, mask)
    write_tensor(args.output, feature.values.to(torch.float32))
    print(f"✅ 光照特征已保存: {args.output}")
    return 0


def cmd_make_synthetic(args) -> int:
    config = load_config(args.config)
    manifest = make_synthetic_dataset(config, args.output, seed=args.seed)
    print(f"✅ 合成数据集: {args.output}（{len(manifest)} 条样本）")
    return 0


def cmd_eval(args) -> int:
    model, config = load_model(args.ckpt)
    dtype = next(model.parameters()).dtype
    samples = load_dataset(args.dataset)
    pool = None
    if args.illum == 'random':
        # 与训练一致，从训练集抽取光照
        pool = SceneLoader(load_dataset(_dataset_root(config), validate=False), dtype=dtype).illumination_pool()

    @torch.no_grad()
    def predict(sample):
        loaded = load_sample(sample, dtype)
        planes = model.encode(loaded.sat)
        w = model.style(args.illum, 1, illumination=loaded.illumination.values, pool=pool, seed=args.seed)
        street = model.render_street(planes, w, model.cameras([(sample.east_m, sample.north_m, sample.heading_rad)]))
        return street.hi_res[0].clamp(0.0, 1.0), loaded.street

    evaluate_samples(samples, predict, output_path=args.output, tokens_dir=args.tokens)
    print(f"✅ 评估报告: {args.output}")
    return 0


# ==================== 参数解析 ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='sat2street', description='卫星图到街景全景的可控光照合成')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help='训练模型')
    p.add_argument('config', help='配置文件（yaml/json）或所在目录')
    p.add_argument('--resume', default=None, help='从检查点继续训练')
    p.add_argument('--run-dir', default=None, help='覆盖 output.run_dir')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('render-pano', help='渲染单张街景全景')
    p.add_argument('ckpt')
    p.add_argument('config', nargs='?', default=None, help='数据集所在配置（--sat 未给出时使用）')
    p.add_argument('--position', nargs=2, type=float, default=(0.0, 0.0), metavar=('EAST', 'NORTH'))
    p.add_argument('--heading', type=float, default=0.0, help='航向（弧度）')
    p.add_argument('--illum', default='null', help='光照特征文件 (.ptns) | random | null')
    p.add_argument('--sat', default=None, help='卫星图 PNG')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--maps', default=None, help='深度/不透明度/特征图 (.ptns) 输出目录')
    p.set_defaults(func=cmd_render_pano)

    p = sub.add_parser('render-video', help='按轨迹渲染全景序列')
    p.add_argument('ckpt')
    p.add_argument('trajectory', help='CSV：east_m,north_m,heading_rad')
    p.add_argument('--illum', default='null', help='光照特征文件 (.ptns) | random | null')
    p.add_argument('--sat', default=None)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('-o', '--output', required=True, help='输出帧目录')
    p.set_defaults(func=cmd_render_video)

    p = sub.add_parser('render-sat', help='渲染卫星视角')
    p.add_argument('ckpt')
    p.add_argument('--sat', default=None)
    p.add_argument('--downscale', type=int, default=1)
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--maps', default=None, help='深度/不透明度/特征图 (.ptns) 输出目录')
    p.set_defaults(func=cmd_render_sat)

    p = sub.add_parser('extract-illumination', help='从全景与天空掩码提取光照特征')
    p.add_argument('pano')
    p.add_argument('mask')
    p.add_argument('-o', '--output', required=True)
    p.set_defaults(func=cmd_extract_illumination)

    p = sub.add_parser('make-synthetic', help='生成合成方块数据集')
    p.add_argument('config')
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('-o', '--output', required=True)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser('eval', help='评估检查点')
    p.add_argument('ckpt')
    p.add_argument('dataset')
    p.add_argument('--illum', choices=('real', 'random', 'null'), default='real')
    p.add_argument('--tokens', default=None, help='<sample>_pred.ptns / <sample>_gt.ptns 所在目录')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('-o', '--output', required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    命令行主函数
    
    Returns:
        int: 0 成功；1 运行错误；2 参数错误
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2
    setup_logger()
    try:
        return args.func(args)
    except Sat2StreetError as e:
        logger.error(f"❌ {e}")
        print(f"❌ {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
