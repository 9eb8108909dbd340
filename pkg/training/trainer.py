"""
训练循环
每步先更新生成器侧参数（重建 + 不透明度 + 天空 + 生成器 GAN 项），
再更新判别器（非饱和损失 + R1），两者 1:1 交替、学习率恒定。
每步的随机性（批次索引、卫星裁剪窗口、抖动、random 光照）都由 (seed, iteration) 派生。
"""
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import pandas as pd
import torch

from models.illumination import PROVENANCE_NULL
from objectives.losses import (
    gan_losses,
    generator_adversarial_loss,
    make_street_pair,
    opacity_loss,
    reconstruction_loss,
    sky_loss,
    total_loss,
)
from objectives.perceptual import PerceptualDistance
from persistence.checkpoint_store import load_checkpoint, restore_modules, save_checkpoint
from persistence.run_history import RunHistoryDB
from render.volume_renderer import crop_image, downsample_image, downsample_mask, random_crop_window
from services.dataset_provider import SceneLoader
from services.image_io import save_image
from utils.config_loader import config_hash
from utils.errors import DatasetError, NonFiniteLossError, ShapeMismatchError
from utils.logger import setup_logger
from .config import TrainConfig, step_seed
from .model import Sat2StreetModel, build_discriminators


logger = logging.getLogger('sat2street')

METRICS_NAME = 'metrics.csv'
CHECKPOINT_DIR = 'checkpoints'
LATEST_NAME = 'latest'


@dataclass
class FitResult:
    """fit 的产物：最终检查点路径、逐步损失表、最后一步损失分解"""
    checkpoint_path: Optional[str]
    metrics: pd.DataFrame
    final_losses: Dict[str, float] = field(default_factory=dict)


class Trainer:
    """
    Sat2Street 训练器
    
    Args:
        config: 完整配置
        loader: 训练样本加载器
        dtype: 参数与渲染使用的浮点类型
    """

    def __init__(self, config: Dict[str, Any], loader: SceneLoader, dtype: torch.dtype = torch.float32):
        if len(loader) == 0:
            raise DatasetError("训练数据集为空")
        self.config = config
        self.train_cfg = TrainConfig.from_dict(config)
        self.loader = loader
        self.dtype = dtype

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.train_cfg.seed)
            self.model = Sat2StreetModel(config, self.train_cfg.decoder_variant, self.train_cfg.sky_branch).to(dtype)
            self.discriminators = build_discriminators(config).to(dtype)
        self.perceptual = PerceptualDistance().to(dtype)

        self.opt_g = torch.optim.Adam(self.model.parameters(), lr=self.train_cfg.lr_generator, betas=(0.0, 0.99))
        self.opt_d = torch.optim.Adam(self.discriminators.parameters(), lr=self.train_cfg.lr_discriminator,
                                      betas=(0.0, 0.99))
        self.iteration = 0
        self.last_style_provenance: Optional[str] = None
        self._pool = None

    # ==================== 状态 ====================

    def modules(self) -> Dict[str, torch.nn.Module]:
        groups = dict(self.model.groups())
        groups['discriminators'] = self.discriminators
        return groups

    def optimizers(self) -> Dict[str, torch.optim.Optimizer]:
        return {'generator': self.opt_g, 'discriminator': self.opt_d}

    def save(self, path: str) -> str:
        return save_checkpoint(path, self.modules(), self.iteration, self.config, self.optimizers())

    def resume(self, path: str):
        """从检查点恢复参数、优化器状态与迭代数"""
        checkpoint = load_checkpoint(path)
        if checkpoint.config_hash != config_hash(self.config):
            logger.warning("⚠️ 检查点配置与当前配置不同，按当前配置继续训练")
        restore_modules(checkpoint, self.modules(), self.optimizers())
        self.iteration = checkpoint.iteration
        logger.info(f"🔄 从检查点恢复: {path} (iteration={self.iteration})")

    # ==================== 单步 ====================

    def illumination_pool(self):
        if self._pool is None:
            self._pool = self.loader.illumination_pool()
        return self._pool

    def sample_batch(self, iteration: int):
        """
        组装第 iteration 步的批次
        
        Returns:
            (batch, generator): generator 继续用于裁剪窗口与抖动采样
        """
        generator = torch.Generator().manual_seed(step_seed(self.train_cfg.seed, iteration))
        indices = torch.randint(len(self.loader), (self.train_cfg.batch_size,), generator=generator)
        batch = self.loader.batch(indices.tolist())
        batch['seed'] = step_seed(self.train_cfg.seed, iteration)
        return batch, generator

    def _set_discriminator_grad(self, enabled: bool):
        for p in self.discriminators.parameters():
            p.requires_grad_(enabled)

    def train_step(self, batch: Dict[str, Any], generator: Optional[torch.Generator] = None) -> Dict[str, float]:
        """
        一次生成器更新 + 一次判别器更新
        
        Args:
            batch: SceneLoader.batch 的输出（可带 seed 字段）
            generator: 裁剪与抖动采样使用的随机数发生器
            
        Returns:
            Dict[str, float]: 损失分解（各项原值、加权值与汇总）
        """
        cfg = self.train_cfg
        sat = batch['sat'].to(self.dtype)
        street_gt = batch['street'].to(self.dtype)
        mask = batch['mask'].to(self.dtype)
        bsz = sat.shape[0]
        offsets = [(s.east_m, s.north_m, s.heading_rad) for s in batch['samples']]

        # ---------- 生成器 ----------
        self._set_discriminator_grad(False)
        planes = self.model.encode(sat)
        w = self.model.style(cfg.illumination_policy, bsz, illumination=batch.get('illumination'),
                             pool=self.illumination_pool() if cfg.illumination_policy == 'random' else None,
                             seed=batch.get('seed', 0))
        self.last_style_provenance = w.provenance
        cams = self.model.cameras(offsets)
        street = self.model.render_street(planes, w, cams, generator=generator if cfg.jitter else None)
        if street.hi_res.shape != street_gt.shape:
            raise ShapeMismatchError(
                f"街景真值 {tuple(street_gt.shape)} 与超分输出 {tuple(street.hi_res.shape)} 尺寸不一致"
            )
        gt_low = downsample_image(street_gt, 2)
        mask_low = downsample_mask(mask, 2)

        sat_cam = self.model.sat_camera.downscaled(cfg.sat_downscale)
        crop = random_crop_window(sat_cam, generator)
        sat_render = self.model.render_satellite(planes, cfg.sat_downscale, crop,
                                                 generator=generator if cfg.jitter else None)
        sat_gt = crop_image(downsample_image(sat, cfg.sat_downscale), crop)
        sat_fake = sat_render.raw_color

        parts = {'str': reconstruction_loss(street.hi_res, street_gt, self.perceptual)}
        if cfg.use_sat_loss:
            parts['sat'] = reconstruction_loss(sat_fake, sat_gt, self.perceptual)
        if cfg.use_sky_loss and self.model.sky is not None:
            parts['sky'] = sky_loss(street.sky_color, gt_low, mask_low)
        if cfg.use_opacity_loss:
            parts['opa'] = opacity_loss(street.ground.opacity, mask_low)
        fake_pair = make_street_pair(street.hi_res, street.raw_blend)
        if cfg.use_gan:
            parts['gan_str'] = generator_adversarial_loss(self.discriminators.street, fake_pair)
            parts['gan_sat'] = generator_adversarial_loss(self.discriminators.satellite, sat_fake)

        g_total, breakdown = total_loss(parts, cfg.weights)
        self.opt_g.zero_grad(set_to_none=True)
        if g_total.requires_grad:
            g_total.backward()
            self.opt_g.step()
        self._set_discriminator_grad(True)

        # ---------- 判别器 ----------
        if cfg.use_gan:
            real_pair = make_street_pair(street_gt, gt_low)
            _, d_str, r1_str = gan_losses(self.discriminators.street, real_pair, fake_pair.detach(), cfg.r1_gamma)
            _, d_sat, r1_sat = gan_losses(self.discriminators.satellite, sat_gt, sat_fake.detach(), cfg.r1_gamma)
            d_total = d_str + r1_str + d_sat + r1_sat
            for name, value in (('d_str', d_str), ('r1_str', r1_str), ('d_sat', d_sat), ('r1_sat', r1_sat)):
                v = float(value.detach())
                if not math.isfinite(v):
                    raise NonFiniteLossError(name, v)
                breakdown[name] = v
            self.opt_d.zero_grad(set_to_none=True)
            d_total.backward()
            self.opt_d.step()
        return breakdown

    # ==================== 验证渲染 ====================

    @torch.no_grad()
    def render_validation(self, out_dir: str, index: int = 0) -> List[str]:
        """用第 index 个样本（真实光照、确定性采样）渲染 hi-res / raw / opacity / depth"""
        batch = self.loader.batch([index])
        sample = batch['samples'][0]
        planes = self.model.encode(batch['sat'].to(self.dtype))
        policy = 'null' if self.train_cfg.illumination_policy == PROVENANCE_NULL else 'real'
        w = self.model.style(policy, 1, illumination=batch['illumination'])
        cams = self.model.cameras([(sample.east_m, sample.north_m, sample.heading_rad)])
        street = self.model.render_street(planes, w, cams)
        t_far = self.model.settings.t_far or self.model.frame.diagonal
        images = {
            'hires': street.hi_res[0],
            'raw': street.raw_blend[0],
            'opacity': street.ground.opacity[0],
            'depth': street.ground.depth[0] / t_far,
        }
        paths = []
        for kind, image in images.items():
            path = os.path.join(out_dir, f"iter_{self.iteration:06d}_{kind}.png")
            save_image(path, image)
            paths.append(path)
        return paths

    # ==================== 训练循环 ====================

    def fit(self, run_dir: Optional[str] = None, history: Optional[RunHistoryDB] = None) -> FitResult:
        """
        运行到 train.iterations 为止（从检查点恢复时从其迭代数继续）
        
        Args:
            run_dir: 运行目录（检查点、metrics.csv、验证图）；None 时不落盘
            history: 运行历史数据库
        """
        cfg = self.train_cfg
        records: List[Dict[str, Any]] = []
        run_id = history.create_run(self.config, config_hash(self.config), run_dir, self.iteration) if history else None
        logger.info(f"🚀 开始训练: iteration {self.iteration} -> {cfg.iterations}")

        breakdown: Dict[str, float] = {}
        checkpoint_path = None
        try:
            while self.iteration < cfg.iterations:
                batch, generator = self.sample_batch(self.iteration)
                breakdown = self.train_step(batch, generator)
                self.iteration += 1
                records.append({'iteration': self.iteration, **breakdown})

                if cfg.log_interval and (self.iteration % cfg.log_interval == 0 or self.iteration == 1):
                    terms = ' '.join(f"{k}={v:.4f}" for k, v in breakdown.items() if not k.startswith('w_'))
                    logger.info(f"📈 iter {self.iteration}: {terms}")
                    if history:
                        history.save_losses(run_id, self.iteration, breakdown)
                if run_dir and cfg.checkpoint_interval and self.iteration % cfg.checkpoint_interval == 0:
                    self.save(os.path.join(run_dir, CHECKPOINT_DIR, f"iter_{self.iteration:06d}"))
                    self._write_metrics(run_dir, records)
                if run_dir and cfg.validation_interval and self.iteration % cfg.validation_interval == 0:
                    self.render_validation(os.path.join(run_dir, 'validation'))
        except Exception:
            if run_dir and records:
                self._write_metrics(run_dir, records)
            if history:
                history.complete_run(run_id, self.iteration, breakdown, status='failed')
            logger.error(f"❌ 训练在 iteration {self.iteration} 中止")
            raise

        if run_dir:
            checkpoint_path = self.save(os.path.join(run_dir, CHECKPOINT_DIR, LATEST_NAME))
            self._write_metrics(run_dir, records)
        if history:
            history.complete_run(run_id, self.iteration, breakdown)
        logger.info(f"✅ 训练完成: iteration={self.iteration}")
        return FitResult(checkpoint_path=checkpoint_path, metrics=pd.DataFrame(records), final_losses=breakdown)

    def _write_metrics(self, run_dir: str, records: List[Dict[str, Any]]):
        """追加写入 metrics.csv（恢复训练时接在已有记录之后）"""
        path = os.path.join(run_dir, METRICS_NAME)
        df = pd.DataFrame(records)
        if os.path.exists(path):
            existing = pd.read_csv(path)
            existing = existing[existing['iteration'] < (df['iteration'].min() if len(df) else math.inf)]
            df = pd.concat([existing, df], ignore_index=True)
        os.makedirs(run_dir, exist_ok=True)
        df.to_csv(path, index=False)


def fit(config: Dict[str, Any], loader: SceneLoader, run_dir: Optional[str] = None,
        resume_from: Optional[str] = None, dtype: torch.dtype = torch.float32) -> FitResult:
    """
    训练入口
    
    Args:
        config: 完整配置
        loader: 训练样本
        run_dir: 运行目录，默认 output.run_dir
        resume_from: 检查点目录（可选）
        dtype: 浮点类型
        
    Returns:
        FitResult: 最终检查点与损失记录
    """
    output = config.get('output', {})
    run_dir = run_dir or output.get('run_dir')
    if output.get('log_file'):
        setup_logger(log_file=output['log_file'])
    trainer = Trainer(config, loader, dtype)
    if resume_from:
        trainer.resume(resume_from)
    history = RunHistoryDB(output['history_db']) if output.get('enable_history') else None
    return trainer.fit(run_dir, history)
