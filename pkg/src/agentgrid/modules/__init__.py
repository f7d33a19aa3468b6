from .catalog import Preset, load_preset, load_specs, preset_names, seed_pools
from .strategies import memory_read, memory_write, plan, reason, select_tool

__all__ = [
    "Preset",
    "load_preset",
    "load_specs",
    "preset_names",
    "seed_pools",
    "plan",
    "reason",
    "select_tool",
    "memory_read",
    "memory_write",
]
