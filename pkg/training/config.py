"""训练配置（由完整配置字典的 train / loss / render 段构造并校验）"""
from dataclasses import dataclass, field
from typing import Any, Dict

from models.decoder import VARIANTS
from objectives.losses import LossWeights
from utils.errors import ConfigError


ILLUMINATION_POLICIES = ('real', 'random', 'null')


@dataclass
class TrainConfig:
    """
    训练参数与消融开关
    
    Args:
        iterations: 迭代次数（≥1）
        batch_size: 批大小（≥1）
        lr_generator / lr_discriminator: Adam 学习率
        seed: 随机种子（模型初始化与每步采样均由其派生）
        decoder_variant: 'adaptive' | 'vanilla'
        sky_branch: False 时天空特征恒为零
        use_opacity_loss / use_sky_loss / use_sat_loss / use_gan: 各损失项开关
        illumination_policy: 'real' | 'random' | 'null'
        weights: 损失权重
        r1_gamma: R1 系数
        jitter: 训练时分层抖动采样
        sat_downscale: 卫星视角监督的降采样倍数
    """
    iterations: int = 500
    batch_size: int = 1
    lr_generator: float = 2e-3
    lr_discriminator: float = 2e-3
    seed: int = 0
    decoder_variant: str = 'adaptive'
    sky_branch: bool = True
    use_opacity_loss: bool = True
    use_sky_loss: bool = True
    use_sat_loss: bool = True
    use_gan: bool = True
    illumination_policy: str = 'real'
    log_interval: int = 10
    checkpoint_interval: int = 250
    validation_interval: int = 250
    weights: LossWeights = field(default_factory=LossWeights)
    r1_gamma: float = 1.0
    jitter: bool = False
    sat_downscale: int = 4

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations 至少为1: {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size 至少为1: {self.batch_size}")
        if self.illumination_policy not in ILLUMINATION_POLICIES:
            raise ConfigError(f"未知的光照策略: {self.illumination_policy}")
        if self.decoder_variant not in VARIANTS:
            raise ConfigError(f"未知的解码器类型: {self.decoder_variant}")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ConfigError("学习率必须为正")
        if self.r1_gamma < 0:
            raise ConfigError(f"r1_gamma 必须非负: {self.r1_gamma}")
        if self.sat_downscale < 1:
            raise ConfigError(f"sat_downscale 至少为1: {self.sat_downscale}")
        for name in ('log_interval', 'checkpoint_interval', 'validation_interval'):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} 必须非负")

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> 'TrainConfig':
        train = config['train']
        variant = train.get('decoder_variant') or config['model']['decoder_variant']
        return cls(
            iterations=int(train['iterations']),
            batch_size=int(train['batch_size']),
            lr_generator=float(train['lr_generator']),
            lr_discriminator=float(train['lr_discriminator']),
            seed=int(train['seed']),
            decoder_variant=variant,
            sky_branch=bool(train['sky_branch']),
            use_opacity_loss=bool(train['use_opacity_loss']),
            use_sky_loss=bool(train['use_sky_loss']),
            use_sat_loss=bool(train['use_sat_loss']),
            use_gan=bool(train['use_gan']),
            illumination_policy=str(train['illumination_policy']),
            log_interval=int(train['log_interval']),
            checkpoint_interval=int(train['checkpoint_interval']),
            validation_interval=int(train['validation_interval']),
            weights=LossWeights.from_config(config['loss']),
            r1_gamma=float(config['loss'].get('r1_gamma', 1.0)),
            jitter=bool(config['render'].get('jitter', False)),
            sat_downscale=int(config['render'].get('sat_downscale', 4)),
        )


def step_seed(seed: int, iteration: int) -> int:
    """每步随机数种子（仅由种子与迭代序号决定，恢复训练无需保存随机状态）"""
    return (int(seed) * 1_000_003 + int(iteration)) % (2 ** 63 - 1)
