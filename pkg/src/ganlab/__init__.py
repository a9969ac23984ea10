"""Generator-loss experiments for GANs on toy data, with a small numpy autodiff engine."""

from .losses import ConfigError

__all__ = ["ConfigError"]
__version__ = "0.1.0"
