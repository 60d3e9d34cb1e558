"""Discovery of a shared PDE from multiple noisy experiments."""

__version__ = '1.0.0'
