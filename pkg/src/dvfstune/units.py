"""Unit-suffixed option parsing. Everything is normalized to seconds and MHz."""

import re

from .exceptions import ConfigError

_NUMBER = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"

_TIME_SCALE = {"": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9}
_FREQ_SCALE = {"": 1.0, "mhz": 1.0, "ghz": 1e3, "khz": 1e-3, "hz": 1e-6}


def _split(text):
    m = re.fullmatch(_NUMBER + r"\s*([a-zA-Zµ]*)", text.strip())
    if m is None:
        raise ConfigError(f"cannot parse quantity {text!r}")
    return float(m.group(1)), m.group(2)


def parse_duration(text):
    """Parse ``"10us"``, ``"10ms"``, ``"0.5s"`` or a bare number of seconds."""
    value, suffix = _split(text)
    try:
        return value * _TIME_SCALE[suffix.lower() if suffix != "µs" else suffix]
    except KeyError:
        raise ConfigError(f"unknown time unit {suffix!r} in {text!r}") from None


def parse_frequency(text):
    """Parse ``"650MHz"``, ``"2.4GHz"`` or a bare number of MHz."""
    value, suffix = _split(text)
    try:
        return value * _FREQ_SCALE[suffix.lower()]
    except KeyError:
        raise ConfigError(f"unknown frequency unit {suffix!r} in {text!r}") from None


def ghz(value):
    return value * 1e3
