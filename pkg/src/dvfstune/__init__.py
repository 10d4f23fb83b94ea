"""Energy/performance modeling and clock planning for multi-kernel workloads under DVFS."""

__version__ = "0.1.0"

from .fitting import (
    FitResult,
    KneeRegressor,
    LinearPowerRegressor,
    SuperlinearPowerRegressor,
    fit_knee,
    fit_power_linear,
    fit_power_superlinear,
    regime_profile,
)
from .model import (
    KernelSpec,
    MachineSpec,
    PerfModel,
    PowerModel,
    Regime,
    Superlinear,
    SwitchCost,
    classify_regime,
    crossover_frequency,
    edp,
    machine_balance,
    predict_energy,
    predict_power,
    predict_time,
    roofline_time,
)
from .planner import (
    FrequencyPlan,
    Objective,
    Policy,
    evaluate_plan,
    pareto,
    plan_schedule,
    savings_report,
    select_frequency,
)
from .simproc import Phase, SimConfig, effective_frequency, simulate, switch_penalty
from .traces import (
    Channel,
    Marker,
    MarkerKind,
    PowerSample,
    PowerTrace,
    SweepPoint,
    average_power,
    build_sweep,
    emit_trace,
    integrate_energy,
    parse_trace,
    segment,
    sum_channels,
)
