"""Unit-suffixed numeric literals ("25MB", "600s", "19.2Mbps") normalized to base SI."""

from __future__ import annotations

import math
import re

# Decimal prefixes only: MB = 10**6 bytes, KB = 10**3 bytes.
_SCALE = {
    "": 1.0,
    "B": 1.0,
    "KB": 1e3,
    "kB": 1e3,
    "MB": 1e6,
    "GB": 1e9,
    "s": 1.0,
    "ms": 1e-3,
    "min": 60.0,
    "h": 3600.0,
    "bps": 1.0,
    "kbps": 1e3,
    "Kbps": 1e3,
    "Mbps": 1e6,
    "Gbps": 1e9,
}

_LITERAL = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z]*)\s*$")


def parse_quantity(value: str | int | float) -> float:
    """Return ``value`` as a float in base units.

    Plain numbers pass through unchanged; strings may carry one of the suffixes
    in ``_SCALE``. Raises ``ValueError`` on unknown suffixes or non-finite input.
    """
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        out = float(value)
    else:
        m = _LITERAL.match(str(value))
        if m is None:
            raise ValueError(f"not a numeric literal: {value!r}")
        number, suffix = m.groups()
        if suffix not in _SCALE:
            raise ValueError(f"unknown unit suffix {suffix!r} in {value!r}")
        out = float(number) * _SCALE[suffix]
    if not math.isfinite(out):
        raise ValueError(f"non-finite value: {value!r}")
    return out
