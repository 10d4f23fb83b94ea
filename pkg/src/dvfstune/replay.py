"""Model-generated GPU sweeps built from published K80 power fits.

These are synthetic stand-ins for hardware measurements: power comes from
the linear (and, for collide, exponential) fits, times from knee models
whose plateaus are set to a few milliseconds per iteration.
"""

from __future__ import annotations

from .model import K80_LIKE, MachineSpec, PerfModel, PowerModel, Superlinear, SwitchCost
from .simproc import Phase, model_sweep

PROPAGATE_POWER = PowerModel(m=0.096, p_static=42.94)
COLLIDE_LINEAR = PowerModel(m=0.109, p_static=42.50)
COLLIDE_POWER = PowerModel(m=0.109, p_static=42.50, superlinear=Superlinear(a=0.005, b=0.0099, f_knee=650.0))

PROPAGATE_KNEE = 650.0
COLLIDE_KNEE = 800.0

# every other K80 boost clock: 13 points from 562 to 875 MHz
GPU_GRID_13 = (562.0, 588.0, 614.0, 640.0, 666.0, 692.0, 718.0, 745.0, 771.0, 797.0, 823.0, 849.0, 875.0)
# the same grid with the propagate knee added so the energy optimum is a grid point
GPU_REPLAY_GRID = tuple(sorted(GPU_GRID_13 + (PROPAGATE_KNEE,)))

PLATEAU_TIME = 3e-3  # seconds per iteration once a kernel turns memory-bound

PROPAGATE_PERF = PerfModel(k=PLATEAU_TIME * PROPAGATE_KNEE, alpha=1.0 / PROPAGATE_KNEE)
COLLIDE_PERF = PerfModel(k=PLATEAU_TIME * COLLIDE_KNEE, alpha=1.0 / COLLIDE_KNEE)

BASELINE_FREQ = 875.0  # top non-boost clock stands in for the default governor

REPLAY_MACHINE = MachineSpec(
    name="k80-replay",
    freq_grid=GPU_REPLAY_GRID,
    mem_freq=K80_LIKE.mem_freq,
    compute_per_mhz=K80_LIKE.compute_per_mhz,
    bandwidth=K80_LIKE.bandwidth,
    tdp=K80_LIKE.tdp,
    switch_cost=SwitchCost(),
)

KERNELS = {
    "propagate": (PROPAGATE_PERF, PROPAGATE_POWER),
    "collide": (COLLIDE_PERF, COLLIDE_POWER),
}


def replay_sweep(kernels=("propagate", "collide"), grid=GPU_REPLAY_GRID, iterations=1):
    """Sweep table generated directly from the replay models."""
    return {k: model_sweep(*KERNELS[k], grid, iterations) for k in kernels}


def replay_phases(kernels=("propagate", "collide"), grid=GPU_REPLAY_GRID, iterations=1000):
    """One phase per (frequency, kernel), frequency-major, for feeding the simulator."""
    return [
        Phase(k, f, iterations, *KERNELS[k])
        for f in grid
        for k in kernels
    ]
