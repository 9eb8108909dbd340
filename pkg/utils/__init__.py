"""工具模块"""
from .logger import setup_logger
from .config_loader import DEFAULT_CONFIG, load_config, config_hash, merge_config
from .errors import (
    Sat2StreetError,
    ShapeMismatchError,
    InvalidCameraError,
    InvalidRangeError,
    ConfigError,
    DatasetError,
    TensorFileError,
    CheckpointError,
    NonFiniteLossError,
)

__all__ = [
    'setup_logger',
    'DEFAULT_CONFIG', 'load_config', 'config_hash', 'merge_config',
    'Sat2StreetError', 'ShapeMismatchError', 'InvalidCameraError', 'InvalidRangeError',
    'ConfigError', 'DatasetError', 'TensorFileError', 'CheckpointError', 'NonFiniteLossError',
]
