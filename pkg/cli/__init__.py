"""命令行模块"""
from .main import build_parser, load_model, main

__all__ = ['build_parser', 'load_model', 'main']
