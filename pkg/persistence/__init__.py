"""持久化模块：检查点与训练运行历史"""
from .checkpoint_store import Checkpoint, save_checkpoint, load_checkpoint, restore_modules
from .run_history import RunHistoryDB

__all__ = ['Checkpoint', 'save_checkpoint', 'load_checkpoint', 'restore_modules', 'RunHistoryDB']
