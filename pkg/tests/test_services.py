"""服务层：PTNS 张量文件、PNG 读写、数据集清单、评估指标与报告、运行历史与检查点"""
import json
import logging
import math
import os

import numpy as np
import pandas as pd
import pytest
import torch
import torch.nn as nn

from persistence.checkpoint_store import load_checkpoint, restore_modules, save_checkpoint
from persistence.run_history import RunHistoryDB
from services.dataset_provider import (
    SceneLoader,
    apply_dataset_meta,
    load_dataset,
    load_trajectory,
)
from services.evaluation import MEAN_ROW, REPORT_COLUMNS, evaluate_samples
from services.image_io import load_image, load_mask, save_image, save_mask
from services.metrics import dino_similarity, gaussian_window, psnr, ssim
from services.tensor_io import decode_tensor, encode_tensor, read_tensor, write_tensor
from utils.errors import CheckpointError, DatasetError, InvalidRangeError, TensorFileError


# ==================== PTNS ====================

class TestTensorFile:
    @pytest.mark.parametrize('dtype', [torch.float32, torch.float64, torch.uint8])
    @pytest.mark.parametrize('shape', [(), (5,), (2, 3), (1, 2, 3), (2, 1, 3, 2)])
    def test_round_trip(self, tmp_path, dtype, shape):
        if dtype == torch.uint8:
            tensor = torch.randint(0, 256, shape, dtype=torch.uint8)
        else:
            tensor = torch.randn(shape, dtype=dtype)
        path = str(tmp_path / 'sub' / 't.ptns')
        write_tensor(path, tensor)
        back = read_tensor(path)
        assert back.dtype == dtype
        assert tuple(back.shape) == shape
        assert torch.equal(back, tensor)

    def test_header_layout(self):
        data = encode_tensor(torch.zeros(2, 3, dtype=torch.float32))
        assert data[:4] == b'PTNS'
        assert len(data) == 4 + 2 + 2 + 2 * 8 + 1 + 6 * 4

    def test_bad_magic(self):
        data = bytearray(encode_tensor(torch.zeros(2)))
        data[:4] = b'XXXX'
        with pytest.raises(TensorFileError):
            decode_tensor(bytes(data))

    def test_truncated_payload(self):
        data = encode_tensor(torch.zeros(4, dtype=torch.float64))
        with pytest.raises(TensorFileError):
            decode_tensor(data[:-3])

    def test_unsupported_dtype_and_missing_file(self, tmp_path):
        with pytest.raises(TensorFileError):
            encode_tensor(torch.zeros(2, dtype=torch.int64))
        with pytest.raises(TensorFileError):
            read_tensor(str(tmp_path / 'missing.ptns'))


# ==================== PNG ====================

class TestImageIO:
    def test_round_trip_quantization(self, tmp_path):
        image = torch.rand(3, 4, 5, dtype=torch.float64)
        path = str(tmp_path / 'img.png')
        save_image(path, image)
        back = load_image(path, torch.float64)
        assert tuple(back.shape) == (3, 4, 5)
        assert float((back - image).abs().max()) <= 0.5 / 255 + 1e-12

    def test_mask_round_trip(self, tmp_path):
        mask = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
        path = str(tmp_path / 'mask.png')
        save_mask(path, mask)
        assert torch.equal(load_mask(path), mask)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError):
            load_image(str(tmp_path / 'nope.png'))


# ==================== 数据集 ====================

def _write_dataset(root, rows, mask_size=(16, 32), header=True):
    os.makedirs(root, exist_ok=True)
    save_image(os.path.join(root, 'sat.png'), torch.rand(3, 8, 8))
    street = torch.rand(3, 16, 32)
    street[:, :8] = 0.8
    save_image(os.path.join(root, 'street.png'), street)
    mask = torch.zeros(mask_size)
    mask[: mask_size[0] // 2] = 1.0
    save_mask(os.path.join(root, 'mask.png'), mask)
    lines = ['sat,street,mask,east_m,north_m,heading_rad'] if header else []
    lines += rows
    with open(os.path.join(root, 'manifest.csv'), 'w') as f:
        f.write('\n'.join(lines) + '\n')


GOOD_ROW = 'sat.png,street.png,mask.png,1.5,-2.0,0.25'


class TestDataset:
    def test_single_sample(self, tmp_path):
        root = str(tmp_path / 'ds')
        _write_dataset(root, [GOOD_ROW])
        samples = load_dataset(root)
        assert len(samples) == 1
        assert samples[0].name == 'street'
        assert (samples[0].east_m, samples[0].north_m, samples[0].heading_rad) == (1.5, -2.0, 0.25)
        batch = SceneLoader(samples).batch([0, 0])
        assert tuple(batch['sat'].shape) == (2, 3, 8, 8)
        assert tuple(batch['mask'].shape) == (2, 1, 16, 32)
        assert tuple(batch['illumination'].shape) == (2, 270)
        assert float(batch['illumination'][0, :90].sum()) == pytest.approx(1.0, abs=1e-5)

    def test_empty_manifest(self, tmp_path):
        root = str(tmp_path / 'ds')
        _write_dataset(root, [])
        assert load_dataset(root) == []

    def test_malformed_line_is_reported(self, tmp_path):
        root = str(tmp_path / 'ds')
        _write_dataset(root, [GOOD_ROW, 'sat.png,street.png,mask.png,abc,0,0'])
        with pytest.raises(DatasetError, match='第 3 行'):
            load_dataset(root)

    def test_mask_size_mismatch(self, tmp_path):
        root = str(tmp_path / 'ds')
        _write_dataset(root, [GOOD_ROW], mask_size=(16, 16))
        with pytest.raises(DatasetError, match='street'):
            load_dataset(root)

    def test_grayscale_mask_warns_and_binarizes(self, tmp_path, caplog, monkeypatch):
        root = str(tmp_path / 'ds')
        _write_dataset(root, [GOOD_ROW])
        mask = torch.zeros(16, 32)
        mask[:8] = 0.6
        mask[8:, :4] = 0.2
        save_mask(os.path.join(root, 'mask.png'), mask)
        monkeypatch.setattr(logging.getLogger('sat2street'), 'propagate', True)
        with caplog.at_level(logging.WARNING, logger='sat2street'):
            batch = SceneLoader(load_dataset(root)).batch([0])
        assert '天空掩码不是严格二值' in caplog.text
        loaded = batch['mask'][0, 0]
        assert bool(((loaded == 0) | (loaded == 1)).all())
        assert float(loaded[:8].sum()) == 8 * 32
        assert float(loaded[8:].sum()) == 0.0

    def test_missing_columns_and_manifest(self, tmp_path):
        root = str(tmp_path / 'ds')
        os.makedirs(root)
        with pytest.raises(DatasetError):
            load_dataset(root)
        with open(os.path.join(root, 'manifest.csv'), 'w') as f:
            f.write('sat,street\na.png,b.png\n')
        with pytest.raises(DatasetError):
            load_dataset(root)

    def test_meta_overrides_scene(self, tmp_path, config):
        root = str(tmp_path / 'ds')
        os.makedirs(root)
        with open(os.path.join(root, 'meta.json'), 'w') as f:
            json.dump({'gsd': 0.5, 'unrelated': 1}, f)
        merged = apply_dataset_meta(config, root)
        assert merged['scene']['gsd'] == 0.5
        assert 'unrelated' not in merged['scene']

    def test_trajectory(self, tmp_path):
        path = str(tmp_path / 'traj.csv')
        pd.DataFrame({'east_m': [0, 1], 'north_m': [0, 2], 'heading_rad': [0.0, 0.5]}).to_csv(path, index=False)
        traj = load_trajectory(path)
        assert list(traj.columns) == ['east_m', 'north_m', 'heading_rad']
        assert traj['north_m'].tolist() == [0.0, 2.0]


# ==================== 指标 ====================

def _ssim_reference(a, b):
    """逐窗口循环计算的 SSIM"""
    window = gaussian_window().numpy()
    x, y = a.mean(dim=0).numpy(), b.mean(dim=0).numpy()
    k = window.shape[0]
    values = []
    for i in range(x.shape[0] - k + 1):
        for j in range(x.shape[1] - k + 1):
            px, py = x[i:i + k, j:j + k], y[i:i + k, j:j + k]
            mx, my = (window * px).sum(), (window * py).sum()
            vx = (window * px * px).sum() - mx ** 2
            vy = (window * py * py).sum() - my ** 2
            cov = (window * px * py).sum() - mx * my
            c1, c2 = 0.01 ** 2, 0.03 ** 2
            values.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(values))


class TestMetrics:
    def test_psnr(self):
        a = torch.zeros(3, 8, 8)
        b = torch.full((3, 8, 8), 0.1)
        assert psnr(a, b) == pytest.approx(20.0)
        assert psnr(a, b) == psnr(b, a)
        assert psnr(a, a) == math.inf

    def test_ssim_matches_reference(self):
        torch.manual_seed(0)
        a = torch.rand(3, 16, 16, dtype=torch.float64)
        b = (a + 0.1 * torch.rand(3, 16, 16, dtype=torch.float64)).clamp(0, 1)
        assert ssim(a, b) == pytest.approx(_ssim_reference(a, b), abs=1e-9)
        assert ssim(a, a) == pytest.approx(1.0)

    def test_ssim_too_small(self):
        with pytest.raises(InvalidRangeError):
            ssim(torch.rand(3, 8, 8), torch.rand(3, 8, 8))

    def test_dino_similarity(self):
        tokens = torch.randn(5, 7, dtype=torch.float64)
        assert dino_similarity(tokens, tokens) == pytest.approx(1.0)
        assert dino_similarity(tokens, -tokens) == pytest.approx(-1.0)
        a = torch.tensor([[1.0, 0.0]])
        b = torch.tensor([[0.0, 3.0]])
        assert dino_similarity(a, b) == pytest.approx(0.0)
        with pytest.raises(InvalidRangeError):
            dino_similarity(torch.zeros(1, 2), b)


class TestEvaluation:
    def test_report(self, tmp_path):
        root = str(tmp_path / 'ds')
        _write_dataset(root, [GOOD_ROW, GOOD_ROW])
        samples = load_dataset(root)
        loader = SceneLoader(samples, dtype=torch.float64)

        def predict(sample):
            gt = loader.get(samples.index(sample)).street
            return gt * 0.9, gt

        out = str(tmp_path / 'report' / 'eval.csv')
        report = evaluate_samples(samples, predict, output_path=out)
        assert list(report.columns) == REPORT_COLUMNS
        assert len(report) == 3
        assert report['sample'].iloc[-1] == MEAN_ROW
        assert report['psnr'].iloc[-1] == pytest.approx(report['psnr'].iloc[:2].mean())
        assert report['dino'].isna().all()
        assert os.path.exists(out)

    def test_tokens(self, tmp_path):
        root = str(tmp_path / 'ds')
        _write_dataset(root, [GOOD_ROW])
        samples = load_dataset(root)
        tokens = torch.randn(4, 6)
        write_tensor(str(tmp_path / 'tokens' / 'street_pred.ptns'), tokens)
        write_tensor(str(tmp_path / 'tokens' / 'street_gt.ptns'), tokens)
        street = load_image(samples[0].street)
        report = evaluate_samples(samples, lambda s: (street, street), tokens_dir=str(tmp_path / 'tokens'))
        assert report['dino'].iloc[0] == pytest.approx(1.0)
        assert report['psnr'].iloc[0] == math.inf


# ==================== 运行历史 ====================

class TestRunHistory:
    def test_run_lifecycle(self, tmp_path, config):
        db = RunHistoryDB(str(tmp_path / 'history.db'))
        run_id = db.create_run(config, 'abc', run_dir=str(tmp_path))
        db.save_losses(run_id, 1, {'total': 3.0, 'str': 1.0})
        db.save_losses(run_id, 2, {'total': 2.0, 'str': 0.5})
        db.complete_run(run_id, 2, {'total': 2.0})

        curve = db.get_loss_curve(run_id)
        assert [(c['iteration'], c['value']) for c in curve] == [(1, 3.0), (2, 2.0)]
        runs = db.get_run_list()
        assert runs[0]['run_id'] == run_id
        assert runs[0]['status'] == 'completed'
        assert db.get_statistics()['completed_runs'] == 1

        db.delete_run(run_id)
        assert db.get_run_list() == []


# ==================== 检查点 ====================

class TestCheckpoint:
    def _modules(self, seed):
        torch.manual_seed(seed)
        return {'decoder': nn.Linear(3, 2), 'sr': nn.Sequential(nn.Linear(2, 2), nn.Linear(2, 1))}

    def test_round_trip(self, tmp_path, config):
        modules = self._modules(0)
        opt = torch.optim.Adam(modules['decoder'].parameters(), lr=1e-3, betas=(0.0, 0.99))
        modules['decoder'](torch.randn(4, 3)).sum().backward()
        opt.step()
        path = str(tmp_path / 'ckpt')
        save_checkpoint(path, modules, 7, config, {'generator': opt})

        checkpoint = load_checkpoint(path)
        assert checkpoint.iteration == 7
        assert checkpoint.config == config

        fresh = self._modules(1)
        fresh_opt = torch.optim.Adam(fresh['decoder'].parameters(), lr=5.0)
        restore_modules(checkpoint, fresh, {'generator': fresh_opt})
        for group in modules:
            for key, value in modules[group].state_dict().items():
                assert torch.equal(fresh[group].state_dict()[key], value)
        group = fresh_opt.state_dict()['param_groups'][0]
        assert group['lr'] == 1e-3
        assert tuple(group['betas']) == (0.0, 0.99)
        state = fresh_opt.state_dict()['state'][0]
        assert torch.equal(state['exp_avg'], opt.state_dict()['state'][0]['exp_avg'])

    def test_overwrite_is_atomic(self, tmp_path, config):
        path = str(tmp_path / 'ckpt')
        save_checkpoint(path, self._modules(0), 1, config)
        save_checkpoint(path, self._modules(1), 2, config)
        assert load_checkpoint(path).iteration == 2
        assert sorted(os.listdir(tmp_path)) == ['ckpt']

    def test_tampered_config(self, tmp_path, config):
        path = str(tmp_path / 'ckpt')
        save_checkpoint(path, self._modules(0), 1, config)
        manifest_path = os.path.join(path, 'manifest.json')
        with open(manifest_path) as f:
            manifest = json.load(f)
        manifest['config']['train']['seed'] = 99
        with open(manifest_path, 'w') as f:
            json.dump(manifest, f)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_group(self, tmp_path, config):
        path = str(tmp_path / 'ckpt')
        save_checkpoint(path, {'decoder': nn.Linear(3, 2)}, 1, config)
        with pytest.raises(CheckpointError):
            restore_modules(load_checkpoint(path), self._modules(0))
