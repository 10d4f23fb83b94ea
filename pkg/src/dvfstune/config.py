"""JSON documents for simulator runs.

A simulation document has a ``sim`` object (:class:`SimConfig` fields) and
either an explicit ``phases`` list or a ``kernels`` map expanded over
``freqs`` (default: the machine grid)::

    {"sim": {...},
     "kernels": {"propagate": {"iterations": 1000, "perf": {...}, "power": {...}}},
     "freqs": [562, 650, 875],
     "repeats": 1}
"""

from __future__ import annotations

import json

from .exceptions import ConfigError
from .model import PerfModel, PowerModel
from .simproc import Phase, SimConfig


def _phase_from_dict(d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    for key in ("kernel", "requested_freq", "iterations", "perf", "power"):
        if key not in d:
            raise ConfigError(f"{where}: missing key {key!r}")
    it = d["iterations"]
    if isinstance(it, bool) or not isinstance(it, int) or it < 1:
        raise ConfigError(f"{where}: key 'iterations' must be a positive integer")
    try:
        return Phase(str(d["kernel"]), float(d["requested_freq"]), it,
                     PerfModel.from_dict(d["perf"]), PowerModel.from_dict(d["power"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise ConfigError(f"{where}.{exc}") from exc
        raise ConfigError(f"{where}: {exc}") from exc


def load_simulation(doc: dict, seed=None):
    """Return ``(phases, SimConfig)`` from a parsed simulation document."""
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected an object")
    if "sim" not in doc:
        raise ConfigError("top level: missing key 'sim'")
    sim = dict(doc["sim"]) if isinstance(doc["sim"], dict) else doc["sim"]
    if seed is not None and isinstance(sim, dict):
        sim["seed"] = seed
    cfg = SimConfig.from_dict(sim)
    if "phases" in doc:
        if not isinstance(doc["phases"], list) or not doc["phases"]:
            raise ConfigError("phases: expected a non-empty list")
        phases = [_phase_from_dict(p, f"phases[{i}]") for i, p in enumerate(doc["phases"])]
    elif "kernels" in doc:
        kernels = doc["kernels"]
        if not isinstance(kernels, dict) or not kernels:
            raise ConfigError("kernels: expected a non-empty object")
        freqs = doc.get("freqs", list(cfg.machine.freq_grid))
        if not isinstance(freqs, list) or not freqs:
            raise ConfigError("freqs: expected a non-empty list")
        repeats = doc.get("repeats", 1)
        if isinstance(repeats, bool) or not isinstance(repeats, int) or repeats < 1:
            raise ConfigError("repeats: expected a positive integer")
        phases = []
        for _ in range(repeats):
            for f in freqs:
                for name, spec in kernels.items():
                    if not isinstance(spec, dict):
                        raise ConfigError(f"kernels.{name}: expected an object")
                    phases.append(_phase_from_dict(
                        {"kernel": name, "requested_freq": f, **spec}, f"kernels.{name}"))
    else:
        raise ConfigError("top level: need either 'phases' or 'kernels'")
    return phases, cfg


def load_simulation_file(path, seed=None):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return load_simulation(doc, seed)
