"""异常类型"""


class Sat2StreetError(Exception):
    """所有业务异常的基类（CLI捕获后返回非零退出码）"""


class ShapeMismatchError(Sat2StreetError, ValueError):
    """张量/图像形状不匹配"""


class InvalidCameraError(Sat2StreetError, ValueError):
    """相机或场景框参数非法"""


class InvalidRangeError(Sat2StreetError, ValueError):
    """数值范围非法（负密度、非正区间长度、越界裁剪等）"""


class ConfigError(Sat2StreetError, ValueError):
    """配置文件缺失或字段非法"""


class DatasetError(Sat2StreetError):
    """数据集清单或样本文件错误"""


class TensorFileError(Sat2StreetError):
    """PTNS张量文件格式错误"""


class CheckpointError(Sat2StreetError):
    """检查点读写失败"""


class NonFiniteLossError(Sat2StreetError, ArithmeticError):
    """损失项出现NaN/Inf"""

    def __init__(self, term: str, value: float = float('nan')):
        self.term = term
        self.value = value
        super().__init__(f"损失项 {term} 非有限值: {value}")
