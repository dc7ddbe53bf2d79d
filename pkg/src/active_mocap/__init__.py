"""Active multi-camera motion-capture simulator and trainer."""

from .accel import BACKEND
from .config import RunConfig, preset

__all__ = ["BACKEND", "RunConfig", "preset"]
__version__ = "0.1.0"
