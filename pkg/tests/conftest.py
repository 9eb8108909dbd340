"""测试公共夹具：桌面微型配置、合成数据集"""
import copy
import math
import os
import sys

import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.config_loader import DEFAULT_CONFIG, merge_config  # noqa: E402


def tiny_config(**overrides):
    """微型配置：16x16 卫星图、8x32 全景、8 个采样点，单 CPU 秒级完成一步训练"""
    base = merge_config(DEFAULT_CONFIG, {
        'scene': {'sat_size': 16, 'gsd': 1.0, 'z_min': -2.0, 'z_max': 6.0, 'camera_height': 1.5},
        'camera': {'pano_height': 8, 'pano_width': 32, 'n_samples': 8, 'sat_samples': 8},
        'model': {
            'plane_channels': 4, 'plane_resolution': 16, 'generator_depth': 2, 'generator_width': 8,
            'decoder_hidden': 16, 'style_dim': 16, 'mapper_layers': 2, 'sky_blocks': 2, 'sky_width': 8,
            'sr_width': 8, 'disc_width': 8, 'disc_depth': 2,
        },
        'render': {'sat_downscale': 2},
        'train': {
            'iterations': 2, 'log_interval': 1, 'checkpoint_interval': 0, 'validation_interval': 0,
        },
        'data': {'n_scenes': 1, 'n_boxes': 2, 'panos_per_scene': 1},
        'output': {'log_file': None, 'enable_history': False},
    })
    return merge_config(base, overrides)


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def synthetic_root(tmp_path, config):
    from synthetic.box_scene import make_synthetic_dataset

    root = str(tmp_path / 'dataset')
    make_synthetic_dataset(config, root, seed=3)
    return root


@pytest.fixture
def loader(synthetic_root):
    from services.dataset_provider import SceneLoader, load_dataset

    return SceneLoader(load_dataset(synthetic_root))


@pytest.fixture
def float64():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)
