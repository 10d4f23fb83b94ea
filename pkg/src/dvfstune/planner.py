"""Pareto fronts, per-kernel frequency selection and whole-iteration clock plans."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import List, Mapping, Sequence, Tuple

from .exceptions import ConfigError, PlanError
from .model import SwitchCost
from .traces import SweepPoint, SweepTable

# above this many per-kernel assignments plan_schedule stops enumerating
EXHAUSTIVE_LIMIT = 100_000


class ObjectiveKind(enum.Enum):
    MIN_ENERGY = "min-energy"
    MIN_TIME = "min-time"
    MIN_EDP = "min-edp"
    ENERGY_UNDER_TIME_CAP = "energy-under-time-cap"


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind
    epsilon: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "Objective":
        """``min-energy``, ``min-time``, ``min-edp`` or ``energy-under-time-cap:0.05``."""
        name, _, arg = text.partition(":")
        try:
            kind = ObjectiveKind(name)
        except ValueError:
            raise ConfigError(f"unknown objective {text!r}") from None
        if kind is ObjectiveKind.ENERGY_UNDER_TIME_CAP:
            try:
                eps = float(arg) if arg else 0.0
            except ValueError:
                raise ConfigError(f"bad time-cap fraction in {text!r}") from None
            if eps < 0:
                raise ConfigError(f"time-cap fraction must be >= 0 in {text!r}")
            return cls(kind, eps)
        if arg:
            raise ConfigError(f"objective {name!r} takes no argument")
        return cls(kind)

    def __str__(self):
        if self.kind is ObjectiveKind.ENERGY_UNDER_TIME_CAP:
            return f"{self.kind.value}:{self.epsilon:g}"
        return self.kind.value


MIN_ENERGY = Objective(ObjectiveKind.MIN_ENERGY)
MIN_TIME = Objective(ObjectiveKind.MIN_TIME)
MIN_EDP = Objective(ObjectiveKind.MIN_EDP)


def energy_under_time_cap(epsilon: float) -> Objective:
    return Objective(ObjectiveKind.ENERGY_UNDER_TIME_CAP, epsilon)


class Policy(enum.Enum):
    PER_KERNEL = "per-kernel"
    FIXED = "fixed"


@dataclass(frozen=True)
class FrequencyPlan:
    policy: Policy
    assignment: Mapping[str, float]
    predicted_t: float
    predicted_e: float
    switches_per_iteration: int

    def to_dict(self):
        return {
            "policy": self.policy.value,
            "assignment": dict(self.assignment),
            "predicted_t_s": self.predicted_t,
            "predicted_e_j": self.predicted_e,
            "switches_per_iteration": self.switches_per_iteration,
        }


def _choose(candidates, obj: Objective):
    """Index of the best ``(t, e, tiebreak)`` candidate; ties fall to the smallest tiebreak."""
    if not candidates:
        raise PlanError("nothing to choose from")
    kind = obj.kind
    if kind is ObjectiveKind.MIN_ENERGY:
        key = lambda c: (c[1], c[2])
    elif kind is ObjectiveKind.MIN_TIME:
        key = lambda c: (c[0], c[2])
    elif kind is ObjectiveKind.MIN_EDP:
        key = lambda c: (c[0] * c[1], c[2])
    else:
        cap = (1.0 + obj.epsilon) * min(c[0] for c in candidates)
        feasible = [i for i, c in enumerate(candidates) if c[0] <= cap]
        return min(feasible, key=lambda i: (candidates[i][1], candidates[i][2]))
    return min(range(len(candidates)), key=lambda i: key(candidates[i]))


def pareto(points: Sequence[SweepPoint]) -> List[SweepPoint]:
    """Points not dominated in (t_s, e_s), sorted by t_s.

    Exact duplicates do not dominate each other and are all kept.
    """
    if not points:
        raise ValueError("pareto of an empty point set")
    ordered = sorted(points, key=lambda p: (p.t_s, p.e_s, p.f))
    front = []
    best_e_before = math.inf  # lowest energy among strictly faster points
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].t_s == ordered[i].t_s:
            j += 1
        group_min = ordered[i].e_s
        if group_min < best_e_before:
            front.extend(p for p in ordered[i:j] if p.e_s == group_min)
            best_e_before = group_min
        i = j
    return front


def select_frequency(table: Sequence[SweepPoint], obj: Objective) -> float:
    if not table:
        raise PlanError("empty sweep table")
    rows = sorted(table, key=lambda r: r.f)
    idx = _choose([(r.t_s, r.e_s, r.f) for r in rows], obj)
    return rows[idx].f


def _shared_grid(tables: SweepTable, iteration: Sequence[str]):
    if not iteration:
        raise PlanError("iteration has no kernels")
    missing = [k for k in iteration if k not in tables]
    if missing:
        raise PlanError(f"no sweep table for kernel {missing[0]!r}")
    kernels = list(dict.fromkeys(iteration))
    grids = {k: tuple(sorted(r.f for r in tables[k])) for k in kernels}
    grid = grids[kernels[0]]
    for k in kernels[1:]:
        if grids[k] != grid:
            raise PlanError(f"kernels {kernels[0]!r} and {k!r} were swept on different frequency grids")
    if not grid:
        raise PlanError(f"empty sweep table for kernel {kernels[0]!r}")
    return kernels, grid


def count_switches(freqs: Sequence[float]) -> int:
    """Clock changes in one cyclic pass over ``freqs`` (the wrap back to the start counts)."""
    n = len(freqs)
    if n < 2:
        return 0
    return sum(1 for i in range(n) if freqs[i] != freqs[(i + 1) % n])


def _totals(rows, iteration, assignment, n_iter, cost):
    freqs = [assignment[k] for k in iteration]
    switches = count_switches(freqs)
    t_iter = math.fsum([rows[k][assignment[k]].t_s for k in iteration] + [switches * cost.latency])
    e_iter = math.fsum([rows[k][assignment[k]].e_s for k in iteration] + [switches * cost.energy])
    return n_iter * t_iter, n_iter * e_iter, switches


def _row_index(tables, kernels):
    return {k: {r.f: r for r in tables[k]} for k in kernels}


def _make_plan(rows, iteration, kernels, assignment, n_iter, cost):
    t, e, switches = _totals(rows, iteration, assignment, n_iter, cost)
    policy = Policy.FIXED if len(set(assignment.values())) == 1 else Policy.PER_KERNEL
    return FrequencyPlan(policy, {k: assignment[k] for k in kernels}, t, e, switches)


def evaluate_plan(plan: FrequencyPlan, tables: SweepTable, iteration: Sequence[str],
                  n_iter: int, cost: SwitchCost) -> Tuple[float, float]:
    """Total ``(seconds, joules)`` of ``n_iter`` iterations under ``plan``."""
    kernels = list(dict.fromkeys(iteration))
    rows = {}
    for k in kernels:
        if k not in tables:
            raise PlanError(f"no sweep table for kernel {k!r}")
        if k not in plan.assignment:
            raise PlanError(f"plan assigns no frequency to {k!r}")
        rows[k] = {r.f: r for r in tables[k]}
        if plan.assignment[k] not in rows[k]:
            raise PlanError(f"no sweep row for {k!r} at {plan.assignment[k]} MHz")
    t, e, _ = _totals(rows, iteration, plan.assignment, n_iter, cost)
    return t, e


def candidate_plans(tables: SweepTable, iteration: Sequence[str], n_iter: int,
                    cost: SwitchCost, obj: Objective, fixed_only: bool = False) -> List[FrequencyPlan]:
    """Every plan ``plan_schedule`` weighs, fixed-frequency plans first.

    Small instances are enumerated exhaustively. Larger ones fall back to the
    fixed plans plus the per-kernel assignment of independent optima.
    """
    if n_iter < 1:
        raise PlanError("n_iter must be >= 1")
    kernels, grid = _shared_grid(tables, iteration)
    rows = _row_index(tables, kernels)
    plans = [_make_plan(rows, iteration, kernels, {k: f for k in kernels}, n_iter, cost) for f in grid]
    if fixed_only or len(kernels) == 1:
        return plans
    if len(grid) ** len(kernels) <= EXHAUSTIVE_LIMIT:
        for combo in itertools.product(grid, repeat=len(kernels)):
            if len(set(combo)) > 1:
                plans.append(_make_plan(rows, iteration, kernels, dict(zip(kernels, combo)), n_iter, cost))
    else:
        independent = {k: select_frequency(tables[k], obj) for k in kernels}
        if len(set(independent.values())) > 1:
            plans.append(_make_plan(rows, iteration, kernels, independent, n_iter, cost))
    return plans


def plan_schedule(tables: SweepTable, iteration: Sequence[str], n_iter: int,
                  cost: SwitchCost, obj: Objective, fixed_only: bool = False) -> FrequencyPlan:
    """Best plan under ``obj``: one clock for the whole run, or one clock per kernel.

    Ties prefer a fixed plan, then lower frequencies in iteration order.
    """
    plans = candidate_plans(tables, iteration, n_iter, cost, obj, fixed_only)
    kernels = list(dict.fromkeys(iteration))
    cands = [
        (p.predicted_t, p.predicted_e,
         (p.policy is not Policy.FIXED, tuple(p.assignment[k] for k in kernels)))
        for p in plans
    ]
    return plans[_choose(cands, obj)]


def fixed_plan(tables: SweepTable, iteration: Sequence[str], n_iter: int,
               cost: SwitchCost, f: float) -> FrequencyPlan:
    kernels, grid = _shared_grid(tables, iteration)
    if f not in grid:
        raise PlanError(f"{f} MHz is not in the swept grid")
    rows = _row_index(tables, kernels)
    return _make_plan(rows, iteration, kernels, {k: f for k in kernels}, n_iter, cost)


def savings_report(plan: FrequencyPlan, baseline: FrequencyPlan) -> Tuple[float, float]:
    """``(e_saving, t_cost)`` of ``plan`` relative to ``baseline`` as fractions."""
    if baseline.predicted_e == 0 or baseline.predicted_t == 0:
        raise PlanError("baseline plan has zero time or energy")
    return (1.0 - plan.predicted_e / baseline.predicted_e,
            plan.predicted_t / baseline.predicted_t - 1.0)
