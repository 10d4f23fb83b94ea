"""Miniature lattice-Boltzmann workload: a memory-bound propagate and a compute-bound collide.

The collision is BGK relaxation toward ``w_l * rho``, which conserves per-site
density but carries none of the thermo-hydrodynamic physics. Boundaries are
periodic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .model import KernelSpec

D2Q9_VELOCITIES = (
    (0, 0), (1, 0), (0, 1), (-1, 0), (0, -1),
    (1, 1), (-1, 1), (-1, -1), (1, -1),
)
D2Q9_WEIGHTS = (4 / 9, 1 / 9, 1 / 9, 1 / 9, 1 / 9, 1 / 36, 1 / 36, 1 / 36, 1 / 36)

DEFAULT_INTENSITY = 13.3
BYTES_PER_VALUE = 8
PAD_OPS = 2  # one multiply and one add per padding step


@dataclass(frozen=True)
class Lattice:
    nx: int
    ny: int
    velocities: Tuple[Tuple[int, int], ...]
    weights: Tuple[float, ...]
    omega: float
    populations: np.ndarray = field(repr=False)
    seed: int = 0

    def __post_init__(self):
        vel = tuple((int(a), int(b)) for a, b in self.velocities)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.nx < 1 or self.ny < 1:
            raise ValueError("lattice dimensions must be >= 1")
        if not vel:
            raise ValueError("velocity set is empty")
        if len(set(vel)) != len(vel):
            raise ValueError("velocity set contains duplicates")
        if len(self.weights) != len(vel):
            raise ValueError(f"{len(vel)} velocities but {len(self.weights)} weights")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {math.fsum(self.weights)!r}, not 1")
        if not 0 <= self.omega <= 2:
            raise ValueError("omega must lie in [0, 2]")
        pops = np.asarray(self.populations, dtype=np.float64)
        if pops.shape != (len(vel), self.nx, self.ny):
            raise ValueError(f"populations shape {pops.shape} != {(len(vel), self.nx, self.ny)}")
        pops.flags.writeable = False
        object.__setattr__(self, "populations", pops)

    @property
    def p(self):
        return len(self.velocities)

    @property
    def sites(self):
        return self.nx * self.ny

    def density(self):
        return self.populations.sum(axis=0)

    def total_density(self):
        return math.fsum(self.populations.ravel().tolist())

    def replace(self, populations):
        return Lattice(self.nx, self.ny, self.velocities, self.weights, self.omega, populations, self.seed)


def init_lattice(nx, ny, velocities=D2Q9_VELOCITIES, weights=D2Q9_WEIGHTS, omega=0.8, seed=0) -> Lattice:
    """Lattice at rest with a seeded positive density perturbation."""
    rng = np.random.default_rng(seed)
    p = len(velocities)
    rho = 1.0 + 0.1 * rng.random((nx, ny))
    noise = 1.0 + 0.01 * rng.random((p, nx, ny))
    pops = np.asarray(weights, dtype=np.float64)[:, None, None] * rho[None] * noise
    return Lattice(nx, ny, velocities, weights, omega, pops, seed)


def propagate(lat: Lattice) -> Lattice:
    """Cyclically shift every population plane by its lattice velocity."""
    out = np.empty_like(lat.populations)
    for l, (cx, cy) in enumerate(lat.velocities):
        out[l] = np.roll(lat.populations[l], (cx, cy), axis=(0, 1))
    return lat.replace(out)


def collide(lat: Lattice, pad: int = 0) -> Lattice:
    """BGK step ``f <- f - omega * (f - w * rho)``.

    ``pad`` extra multiply-add steps per site are evaluated on a scratch
    array and discarded. They only raise the arithmetic intensity.
    """
    f = lat.populations
    rho = f.sum(axis=0)
    w = np.asarray(lat.weights)[:, None, None]
    out = f - lat.omega * (f - w * rho)
    if pad:
        acc = rho.copy()
        for _ in range(pad):
            acc *= 0.5
            acc += 0.25
    return lat.replace(out)


Hook = Callable[[str, str, int], None]


def run(lat: Lattice, n_iter: int, hooks: Optional[Hook] = None, pad: int = 0) -> Lattice:
    """Advance ``n_iter`` steps of propagate then collide.

    ``hooks(kind, kernel, iteration)`` is called with ``"begin"``/``"end"``
    around every kernel invocation.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    call = hooks or (lambda *a: None)
    for it in range(n_iter):
        call("begin", "propagate", it)
        lat = propagate(lat)
        call("end", "propagate", it)
        call("begin", "collide", it)
        lat = collide(lat, pad)
        call("end", "collide", it)
    return lat


@dataclass(frozen=True)
class WorkloadCounters:
    ops_per_site_collide: int
    bytes_per_site_propagate: int
    bytes_per_site_collide: int
    pad: int = 0

    def __post_init__(self):
        if min(self.ops_per_site_collide, self.bytes_per_site_propagate, self.bytes_per_site_collide) < 0:
            raise ValueError("counters must be >= 0")

    @property
    def collide_intensity(self):
        return self.ops_per_site_collide / self.bytes_per_site_collide

    def to_dict(self):
        return {
            "ops_per_site_collide": self.ops_per_site_collide,
            "bytes_per_site_propagate": self.bytes_per_site_propagate,
            "bytes_per_site_collide": self.bytes_per_site_collide,
            "pad": self.pad,
        }


def raw_collide_ops(p: int) -> int:
    """Arithmetic of the unpadded collide, per site.

    The density sum costs p - 1 adds. Each population then costs 4 ops
    (w*rho, f - w*rho, omega*(...), f - ...).
    """
    return (p - 1) + 4 * p


def pad_for_intensity(p: int, target: float) -> int:
    """Smallest padding count that lifts collide's intensity to ``target``."""
    bytes_ = 2 * p * BYTES_PER_VALUE
    need = target * bytes_ - raw_collide_ops(p)
    return max(0, math.ceil(need / PAD_OPS))


def account(lat: Lattice, target_intensity: Optional[float] = DEFAULT_INTENSITY):
    """Per-site counters plus whole-lattice kernel specs ``(propagate, collide)``.

    With ``target_intensity=None`` no padding is applied.
    """
    p = lat.p
    bytes_site = 2 * p * BYTES_PER_VALUE
    pad = 0 if target_intensity is None else pad_for_intensity(p, target_intensity)
    counters = WorkloadCounters(raw_collide_ops(p) + PAD_OPS * pad, bytes_site, bytes_site, pad)
    n = lat.sites
    prop = KernelSpec("propagate", 0, counters.bytes_per_site_propagate * n)
    coll = KernelSpec("collide", counters.ops_per_site_collide * n, counters.bytes_per_site_collide * n)
    return counters, (prop, coll)


def save_checkpoint(lat: Lattice, path) -> None:
    """One JSON header line, then the populations as little-endian float64 (p, nx, ny) C order."""
    header = {
        "nx": lat.nx, "ny": lat.ny, "p": lat.p,
        "velocities": [list(v) for v in lat.velocities],
        "weights": list(lat.weights),
        "omega": lat.omega,
        "seed": lat.seed,
    }
    payload = np.ascontiguousarray(lat.populations, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def load_checkpoint(path) -> Lattice:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        payload = fh.read()
    shape = (header["p"], header["nx"], header["ny"])
    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise ValueError(f"checkpoint payload has {len(payload)} bytes, expected {expected}")
    pops = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return Lattice(header["nx"], header["ny"], [tuple(v) for v in header["velocities"]],
                   header["weights"], header["omega"], pops, header.get("seed", 0))
