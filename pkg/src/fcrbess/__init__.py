"""Battery co-optimization of frequency control reserve and self-consumption."""

__version__ = "0.1.0"

from .model import BatteryConfig, PriceSet, TimeGrid, battery_step, simulate_trajectory

__all__ = [
    "BatteryConfig",
    "PriceSet",
    "TimeGrid",
    "battery_step",
    "simulate_trajectory",
    "__version__",
]
