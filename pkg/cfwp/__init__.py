"""CFWP 度量上 Dirac 算子径向模式的 L² 分析工具"""

__version__ = "1.0.0"
