"""Unit parsing for memory, bandwidth and FLOP-rate strings.

Everything is normalised to bytes, bytes/second and FLOPs/second. Memory
"GB" is read as GiB, because that is how GPU capacities ("40GB A100") and
the published memory tables are quoted in practice.
"""

from __future__ import annotations

import re

KiB = 2**10
MiB = 2**20
GiB = 2**30
TiB = 2**40

_MEMORY_UNITS = {
    "": 1,
    "b": 1,
    "kib": KiB,
    "kb": KiB,
    "mib": MiB,
    "mb": MiB,
    "gib": GiB,
    "gb": GiB,
    "tib": TiB,
    "tb": TiB,
}

# bits per second unless the suffix says bytes ("B/s")
_BANDWIDTH_UNITS = {
    "bps": 1 / 8,
    "kbps": 1e3 / 8,
    "mbps": 1e6 / 8,
    "gbps": 1e9 / 8,
    "tbps": 1e12 / 8,
    "b/s": 1,
    "kb/s": 1e3,
    "mb/s": 1e6,
    "gb/s": 1e9,
    "tb/s": 1e12,
}

_FLOPS_UNITS = {"": 1, "k": 1e3, "m": 1e6, "g": 1e9, "t": 1e12, "p": 1e15}

_NUMBER = r"[-+]?(?:\d[\d_,]*)?(?:\.\d+)?(?:[eE][-+]?\d+)?"
_QUANTITY = re.compile(rf"^\s*({_NUMBER})\s*([A-Za-z/]*)\s*$")


def _split(text: str) -> tuple[float, str]:
    m = _QUANTITY.match(text)
    if not m or not m.group(1) or m.group(1) in "+-":
        raise ValueError(f"cannot parse quantity {text!r}")
    number = m.group(1).replace("_", "").replace(",", "")
    return float(number), m.group(2)


def parse_int(value) -> int:
    """Integer from an int, or a string that may contain ``_`` separators."""
    if isinstance(value, bool):
        raise ValueError(f"expected an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(value, str):
        text = value.strip().replace("_", "").replace(",", "")
        if re.fullmatch(r"[-+]?\d+", text):
            return int(text)
    raise ValueError(f"expected an integer, got {value!r}")


def parse_bytes(value) -> int:
    """``"40GB"`` -> 42949672960. Bare numbers are bytes."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return int(value)
    if not isinstance(value, str):
        raise ValueError(f"expected a memory size, got {value!r}")
    number, unit = _split(value)
    try:
        factor = _MEMORY_UNITS[unit.lower()]
    except KeyError:
        raise ValueError(f"unknown memory unit {unit!r} in {value!r}") from None
    return int(round(number * factor))


def parse_bandwidth(value) -> float:
    """``"200Gbps"`` -> 25e9 bytes/second. Bare numbers are bytes/second."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"expected a bandwidth, got {value!r}")
    number, unit = _split(value)
    if unit == "":
        return number
    key = unit.lower()
    if unit.endswith("B/s"):
        key = unit[:-3].lower() + "b/s"
    elif unit.endswith("b/s"):
        # "Gb/s" with a lower-case b means bits
        key = unit[:-3].lower() + "bps"
    try:
        return number * _BANDWIDTH_UNITS[key]
    except KeyError:
        raise ValueError(f"unknown bandwidth unit {unit!r} in {value!r}") from None


def parse_flops(value) -> float:
    """``"312T"`` or ``"312 TFLOPs"`` -> 3.12e14 FLOPs/second."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"expected a FLOP rate, got {value!r}")
    number, unit = _split(value)
    key = unit.lower()
    for tail in ("flop/s", "flops", "flop"):
        if key.endswith(tail):
            key = key[: -len(tail)]
            break
    try:
        return number * _FLOPS_UNITS[key]
    except KeyError:
        raise ValueError(f"unknown FLOP-rate unit {unit!r} in {value!r}") from None


def parse_seconds(value) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"expected a duration, got {value!r}")
    number, unit = _split(value)
    scale = {"": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}.get(unit.lower())
    if scale is None:
        raise ValueError(f"unknown time unit {unit!r} in {value!r}")
    return number * scale
