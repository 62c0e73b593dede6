"""Built-in device profiles (shipped as data files) and profile loading."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .planner import DeviceProfile

BUILTIN_DEVICES = ("stm32f412", "stm32f746", "stm32f765", "stm32h743")


def load_builtin(name: str) -> DeviceProfile:
    key = name.lower()
    if key not in BUILTIN_DEVICES:
        raise KeyError(f"unknown builtin device {name!r}; have {', '.join(BUILTIN_DEVICES)}")
    text = resources.files("microfit.profiles").joinpath(f"{key}.json").read_text()
    return DeviceProfile.from_dict(json.loads(text))


def load_device(spec: str) -> DeviceProfile:
    """Accepts a builtin name (stm32f746) or a path to a profile JSON."""
    if spec.lower() in BUILTIN_DEVICES:
        return load_builtin(spec)
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(
            f"device {spec!r} is neither a builtin name ({', '.join(BUILTIN_DEVICES)}) nor a file"
        )
    return DeviceProfile.from_dict(json.loads(path.read_text()))
