"""SI-suffixed number parsing shared by the netlist reader and the config loader."""

import math
import re

# Longest suffix first: "meg" must win over "m".
SUFFIXES = {
    "meg": 1e6,
    "f": 1e-15,
    "p": 1e-12,
    "n": 1e-9,
    "u": 1e-6,
    "m": 1e-3,
    "k": 1e3,
    "g": 1e9,
}

_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)([a-zA-Z]*)$")


class SuffixError(ValueError):
    """A numeric token carried a suffix outside the supported table."""

    def __init__(self, token, suffix):
        super().__init__(f"unknown suffix '{suffix}' in '{token}'")
        self.token = token
        self.suffix = suffix


def parse_si(token: str) -> float:
    """Parse ``"17f"`` -> 1.7e-14, ``"1meg"`` -> 1e6, ``"1m"`` -> 1e-3.

    Raises ValueError for malformed numbers and SuffixError for unknown suffixes.
    """
    text = token.strip()
    m = _NUMBER.match(text)
    if m is None:
        raise ValueError(f"malformed number '{token}'")
    mantissa, suffix = m.group(1), m.group(2).lower()
    value = float(mantissa)
    if suffix:
        if suffix not in SUFFIXES:
            raise SuffixError(token, m.group(2))
        value *= SUFFIXES[suffix]
    if not math.isfinite(value):
        raise ValueError(f"non-finite number '{token}'")
    return value


def format_number(value: float) -> str:
    """Locale-independent 9-significant-digit rendering used by every CSV writer."""
    return f"{value:.9g}"
