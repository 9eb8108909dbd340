"""训练模块"""
from .config import ILLUMINATION_POLICIES, TrainConfig, step_seed
from .model import Sat2StreetModel, build_discriminators
from .trainer import FitResult, Trainer, fit

__all__ = [
    'ILLUMINATION_POLICIES', 'TrainConfig', 'step_seed',
    'Sat2StreetModel', 'build_discriminators',
    'FitResult', 'Trainer', 'fit',
]
