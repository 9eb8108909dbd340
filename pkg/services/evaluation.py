"""
评估报告
逐样本计算 PSNR / SSIM / 感知距离 /（可选）DINO 相似度，输出 CSV（最后一行为各列均值）。
"""
import logging
import math
import os
from typing import Callable, Optional, Sequence, Tuple

import pandas as pd
import torch

from objectives.perceptual import PerceptualDistance
from .dataset_provider import SceneSample
from .metrics import psnr, ssim, dino_similarity
from .tensor_io import read_tensor


logger = logging.getLogger('sat2street')

REPORT_COLUMNS = ['sample', 'psnr', 'ssim', 'perc', 'dino']
MEAN_ROW = 'mean'

PredictFn = Callable[[SceneSample], Tuple[torch.Tensor, torch.Tensor]]


def _token_similarity(tokens_dir: Optional[str], name: str) -> float:
    if not tokens_dir:
        return math.nan
    pred_path = os.path.join(tokens_dir, f"{name}_pred.ptns")
    gt_path = os.path.join(tokens_dir, f"{name}_gt.ptns")
    if not (os.path.exists(pred_path) and os.path.exists(gt_path)):
        logger.warning(f"⚠️ 样本 {name} 缺少 token 文件，跳过 DINO 相似度")
        return math.nan
    return dino_similarity(read_tensor(pred_path), read_tensor(gt_path))


def evaluate_samples(samples: Sequence[SceneSample], predict_fn: PredictFn,
                     output_path: Optional[str] = None, tokens_dir: Optional[str] = None,
                     perceptual: Optional[PerceptualDistance] = None) -> pd.DataFrame:
    """
    生成评估报告
    
    Args:
        samples: 评估样本（报告行顺序与此一致）
        predict_fn: sample -> (预测图, 真值图)，均为 (3,H,W) [0,1]
        output_path: 报告 CSV 路径（None 时不落盘）
        tokens_dir: 存放 <sample>_pred.ptns / <sample>_gt.ptns 的目录
        perceptual: 感知距离（默认随机卷积特征）
        
    Returns:
        pd.DataFrame: 列 sample,psnr,ssim,perc,dino；最后一行为均值
    """
    perceptual = perceptual or PerceptualDistance()
    rows = []
    for sample in samples:
        pred, gt = predict_fn(sample)
        pred = pred.detach().to(torch.float64).squeeze(0) if pred.dim() == 4 else pred.detach().to(torch.float64)
        gt = gt.detach().to(torch.float64).squeeze(0) if gt.dim() == 4 else gt.detach().to(torch.float64)
        with torch.no_grad():
            perc = float(perceptual.to(torch.float64)(pred.unsqueeze(0), gt.unsqueeze(0)))
        rows.append({
            'sample': sample.name,
            'psnr': psnr(pred, gt),
            'ssim': ssim(pred, gt),
            'perc': perc,
            'dino': _token_similarity(tokens_dir, sample.name),
        })
        logger.info(f"📊 {sample.name}: PSNR={rows[-1]['psnr']:.2f} SSIM={rows[-1]['ssim']:.4f}")

    report = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    if rows:
        means = report[REPORT_COLUMNS[1:]].mean(axis=0, skipna=True)
        mean_row = {'sample': MEAN_ROW, **{k: float(v) for k, v in means.items()}}
        report = pd.concat([report, pd.DataFrame([mean_row], columns=REPORT_COLUMNS)], ignore_index=True)

    if output_path:
        directory = os.path.dirname(output_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        report.to_csv(output_path, index=False)
        logger.info(f"💾 评估报告已保存: {output_path}")
    return report
