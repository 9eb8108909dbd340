"""
PTNS 张量文件
布局：b"PTNS" | version u16 | rank u16 | dims u64 × rank | dtype u8 | 小端行优先数据
"""
import os
import struct
from typing import Union

import numpy as np
import torch

from utils.errors import TensorFileError


MAGIC = b"PTNS"
VERSION = 1
MAX_RANK = 8

# dtype 标签 <-> numpy 小端类型
DTYPE_TAGS = {
    0: np.dtype('<f4'),
    1: np.dtype('<f8'),
    2: np.dtype('u1'),
}
_TORCH_TO_TAG = {
    torch.float32: 0,
    torch.float64: 1,
    torch.uint8: 2,
}
_TAG_TO_TORCH = {tag: dtype for dtype, tag in _TORCH_TO_TAG.items()}


def encode_tensor(tensor: Union[torch.Tensor, np.ndarray]) -> bytes:
    """张量 -> PTNS 字节串"""
    if isinstance(tensor, np.ndarray):
        tensor = torch.from_numpy(np.ascontiguousarray(tensor))
    tensor = tensor.detach().cpu()
    tag = _TORCH_TO_TAG.get(tensor.dtype)
    if tag is None:
        raise TensorFileError(f"不支持的张量类型: {tensor.dtype}（仅支持 float32/float64/uint8）")
    if tensor.dim() > MAX_RANK:
        raise TensorFileError(f"张量维数 {tensor.dim()} 超过上限 {MAX_RANK}")

    array = tensor.contiguous().numpy().astype(DTYPE_TAGS[tag], copy=False)
    header = MAGIC + struct.pack('<HH', VERSION, array.ndim)
    header += struct.pack(f'<{array.ndim}Q', *array.shape) if array.ndim else b''
    header += struct.pack('<B', tag)
    return header + array.tobytes(order='C')


def decode_tensor(data: bytes, source: str = '<bytes>') -> torch.Tensor:
    """PTNS 字节串 -> 张量（校验魔数、版本与数据长度）"""
    if len(data) < 9 or data[:4] != MAGIC:
        raise TensorFileError(f"{source}: 不是 PTNS 文件（魔数不匹配）")
    version, rank = struct.unpack_from('<HH', data, 4)
    if version != VERSION:
        raise TensorFileError(f"{source}: 不支持的版本 {version}")
    if rank > MAX_RANK:
        raise TensorFileError(f"{source}: 维数 {rank} 超过上限")
    offset = 8
    if len(data) < offset + 8 * rank + 1:
        raise TensorFileError(f"{source}: 文件头被截断")
    dims = struct.unpack_from(f'<{rank}Q', data, offset) if rank else ()
    offset += 8 * rank
    tag, = struct.unpack_from('<B', data, offset)
    offset += 1
    if tag not in DTYPE_TAGS:
        raise TensorFileError(f"{source}: 未知类型标签 {tag}")

    dtype = DTYPE_TAGS[tag]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = data[offset:]
    if len(payload) != expected:
        raise TensorFileError(f"{source}: 数据长度 {len(payload)} 与形状 {tuple(dims)} 不符（应为 {expected}）")
    array = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder('='), copy=True)
    tensor = torch.from_numpy(array)
    return tensor.to(_TAG_TO_TORCH[tag])


def write_tensor(path: str, tensor: Union[torch.Tensor, np.ndarray]):
    """
    保存张量到 PTNS 文件
    
    Args:
        path: 目标路径（父目录自动创建）
        tensor: float32 / float64 / uint8 张量，任意维数（含标量）
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(encode_tensor(tensor))


def read_tensor(path: str) -> torch.Tensor:
    """读取 PTNS 文件"""
    if not os.path.exists(path):
        raise TensorFileError(f"张量文件不存在: {path}")
    with open(path, 'rb') as f:
        return decode_tensor(f.read(), source=path)
