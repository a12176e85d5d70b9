"""Monte Carlo estimation of attack success against quorum-replicated deployments.

Randomness is counter based. Trial ``i`` of a run with master seed ``M`` uses
the seed ``mix64(M ^ mix64(i))``, where ``mix64`` is the SplitMix64 finalizer.
Slot ``k`` of that trial draws the 64-bit key ``mix64(seed + (k + 1) * GOLDEN)``,
i.e. the ``k``-th output of a SplitMix64 stream started at the trial seed.

* Partition model: slot ``k`` receives node ``argsort(keys)[k]``, a uniformly
  random bijection.
* With-replacement model: slot ``k`` receives node ``((key >> 32) * n) >> 32``.

Because each trial is a pure function of ``(M, i)``, trials can be evaluated
in any order, in blocks, on any number of threads, and the success count is
the same integer.
"""

from __future__ import annotations

import enum
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from math import comb, floor, sqrt
from statistics import NormalDist
from typing import Iterable, Optional, Sequence

import numpy as np

from .topology import (
    DeploymentPlan,
    DnnTopology,
    NodePool,
    QuorumConfig,
    SlotAssignment,
    build_plan,
)

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
DEFAULT_ITERATIONS = 100_000
BLOCK_SIZE = 4096
EXACT_SLOT_LIMIT = 16
# Keeps sweep-point seeds disjoint from per-trial seeds.
_SWEEP_DOMAIN = 0x5EED_0F_5EE9


class AssignmentModel(str, enum.Enum):
    PARTITION = "partition"
    WITH_REPLACEMENT = "with_replacement"


def mix64(z):
    """SplitMix64 finalizer, elementwise over ``uint64`` arrays (or a Python int)."""
    scalar = isinstance(z, int)
    x = np.asarray([z & MASK64] if scalar else z, dtype=np.uint64).copy()
    x ^= x >> np.uint64(30)
    x *= np.uint64(0xBF58476D1CE4E5B9)
    x ^= x >> np.uint64(27)
    x *= np.uint64(0x94D049BB133111EB)
    x ^= x >> np.uint64(31)
    return int(x[0]) if scalar else x


def trial_seeds(master_seed: int, start: int, stop: int) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.uint64)
    return mix64(np.uint64(master_seed & MASK64) ^ mix64(idx))


def trial_seed(master_seed: int, index: int) -> int:
    return int(trial_seeds(master_seed, index, index + 1)[0])


def sweep_point_seed(master_seed: int, point_index: int) -> int:
    return mix64((master_seed & MASK64) ^ mix64(_SWEEP_DOMAIN + point_index))


def slot_keys(seeds: np.ndarray, slot_count: int) -> np.ndarray:
    offsets = (np.arange(1, slot_count + 1, dtype=np.uint64) * np.uint64(GOLDEN))
    return mix64(seeds[:, None] + offsets[None, :])


def draw_nodes(seeds: np.ndarray, slot_count: int, node_count: int, model: AssignmentModel) -> np.ndarray:
    """Node id per slot for each trial seed; shape ``(len(seeds), slot_count)``."""
    keys = slot_keys(seeds, slot_count)
    if model is AssignmentModel.PARTITION:
        if node_count != slot_count:
            raise ValueError(f"partition model needs {slot_count} nodes, got {node_count}")
        return np.argsort(keys, axis=1, kind="stable")
    return (((keys >> np.uint64(32)) * np.uint64(node_count)) >> np.uint64(32)).astype(np.int64)


def draw_assignment(plan: DeploymentPlan, pool: NodePool, model: AssignmentModel, seed: int) -> SlotAssignment:
    """The slot assignment used by the trial with the given per-trial seed."""
    _check_model(plan, pool.node_count, model)
    nodes = draw_nodes(np.asarray([seed & MASK64], dtype=np.uint64), plan.total_slots, pool.node_count, model)[0]
    return SlotAssignment(tuple(int(v) for v in nodes), tuple(plan.slot_keys()))


@dataclass(frozen=True)
class TrialOutcome:
    success: bool
    detected_anomaly: bool
    breached_quorums: int
    corrupted_unsecured_layers: int
    unanimous_breaches: int = 0


def evaluate_assignment(plan: DeploymentPlan, assignment: SlotAssignment, corrupted: Iterable[int]) -> TrialOutcome:
    """Apply the quorum decision rule to one concrete assignment.

    A quorum is breached when its corrupted slot count reaches ``n_min`` and
    flags an anomaly when the count is positive but below ``n_min``. A node
    holding several slots of one quorum votes once per slot.
    """
    corrupted = frozenset(corrupted)
    n_min = plan.n_min
    breached = detected = unsecured_hits = unanimous = 0
    for unit in plan.units:
        members = assignment.nodes[unit.first_slot:unit.first_slot + unit.width]
        bad = sum(1 for node in members if node in corrupted)
        if not unit.secured:
            unsecured_hits += bad > 0
        elif bad >= n_min:
            breached += 1
            unanimous += bad == unit.width
        elif bad > 0:
            detected += 1
    return TrialOutcome(
        success=breached > 0 or unsecured_hits > 0,
        detected_anomaly=detected > 0,
        breached_quorums=breached,
        corrupted_unsecured_layers=unsecured_hits,
        unanimous_breaches=unanimous,
    )


def run_trial(plan: DeploymentPlan, pool: NodePool, model: AssignmentModel, seed: int) -> TrialOutcome:
    assignment = draw_assignment(plan, pool, model, seed)
    return evaluate_assignment(plan, assignment, pool.corrupted)


@dataclass(frozen=True)
class AttackScenario:
    plan: DeploymentPlan
    corrupted_count: int
    model: AssignmentModel = AssignmentModel.PARTITION
    iterations: int = DEFAULT_ITERATIONS
    master_seed: int = 0
    node_count: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "model", AssignmentModel(self.model))
        if self.node_count is None:
            object.__setattr__(self, "node_count", self.plan.total_slots)
        if self.iterations < 1:
            raise ValueError(f"iterations must be positive, got {self.iterations}")
        _check_model(self.plan, self.node_count, self.model)
        if not 0 <= self.corrupted_count <= self.node_count:
            raise ValueError(f"corrupted count {self.corrupted_count} not in [0, {self.node_count}]")

    @property
    def pool(self) -> NodePool:
        return NodePool.first_corrupted(self.node_count, self.corrupted_count)


def _check_model(plan: DeploymentPlan, node_count: int, model: AssignmentModel) -> None:
    if node_count < 1:
        raise ValueError("node pool must be nonempty")
    if AssignmentModel(model) is AssignmentModel.PARTITION and node_count != plan.total_slots:
        raise ValueError(
            f"partition model needs pool size == total slots ({plan.total_slots}), got {node_count}")


@dataclass(frozen=True)
class SuccessEstimate:
    gamma_hat: float
    iterations: int
    successes: int
    ci_low: float
    ci_high: float
    master_seed: int
    detections: int = 0

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials < 1:
        raise ValueError("need at least one trial")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    spread = z * sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    low, high = max(0.0, centre - spread), min(1.0, centre + spread)
    # Rounding can push an endpoint past p at the boundaries.
    return min(low, p), max(high, p)


def _unit_layout(plan: DeploymentPlan):
    starts = np.array([u.first_slot for u in plan.units], dtype=np.intp)
    widths = np.array([u.width for u in plan.units])
    secured = np.array([u.secured for u in plan.units], dtype=bool)
    return starts, widths, secured


def _count_block(scenario: AttackScenario, start: int, stop: int) -> tuple[int, int]:
    plan = scenario.plan
    seeds = trial_seeds(scenario.master_seed, start, stop)
    nodes = draw_nodes(seeds, plan.total_slots, scenario.node_count, scenario.model)
    bad = nodes < scenario.corrupted_count
    starts, _, secured = _unit_layout(plan)
    counts = np.add.reduceat(bad.astype(np.int32), starts, axis=1)
    n_min = plan.n_min
    breached = (counts >= n_min) & secured
    hit = (counts >= 1) & ~secured
    detected = (counts >= 1) & (counts < n_min) & secured
    success = breached.any(axis=1) | hit.any(axis=1)
    return int(success.sum()), int(detected.any(axis=1).sum())


def estimate_success(scenario: AttackScenario, workers: int = 1) -> SuccessEstimate:
    """Estimate the attack success probability with a 95% Wilson interval.

    The result is bit-identical for any ``workers`` value.
    """
    n = scenario.iterations
    blocks = [(s, min(s + BLOCK_SIZE, n)) for s in range(0, n, BLOCK_SIZE)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _count_block(scenario, *b), blocks))
    else:
        parts = [_count_block(scenario, *b) for b in blocks]
    successes = sum(p[0] for p in parts)
    detections = sum(p[1] for p in parts)
    low, high = wilson_interval(successes, n)
    return SuccessEstimate(successes / n, n, successes, low, high, scenario.master_seed, detections)


def exact_small_gamma(plan: DeploymentPlan, corrupted_count: int) -> Fraction:
    """Exact success probability under the partition model by enumerating corrupted slot sets.

    Under a uniform bijection the set of slots held by corrupted nodes is a
    uniformly random ``corrupted_count``-subset of the slots.
    """
    n = plan.total_slots
    if n > EXACT_SLOT_LIMIT:
        raise ValueError(f"exact enumeration limited to {EXACT_SLOT_LIMIT} slots, plan has {n}")
    if not 0 <= corrupted_count <= n:
        raise ValueError(f"corrupted count {corrupted_count} not in [0, {n}]")
    slot_unit = [i for i, u in enumerate(plan.units) for _ in range(u.width)]
    units = plan.units
    n_min = plan.n_min
    wins = 0
    for chosen in itertools.combinations(range(n), corrupted_count):
        per_unit = [0] * len(units)
        for slot in chosen:
            per_unit[slot_unit[slot]] += 1
        if any(k >= (n_min if u.secured else 1) for k, u in zip(per_unit, units)):
            wins += 1
    return Fraction(wins, comb(n, corrupted_count))


@dataclass(frozen=True)
class ScenarioSpec:
    """Parametric description of an attack scenario, suitable for sweeping.

    ``secured`` is either an explicit collection of layer indices, or ``None``
    to secure the first ``quorum_count`` layers; ``quorum_count=None`` secures
    every layer. ``n_min`` overrides the threshold-derived vote count.
    ``corrupted_fraction`` (a ``Fraction``) sets ``c = floor(fraction * n)``
    and takes precedence over ``corrupted``.
    """

    layer_count: int
    quorum_size: int
    quorum_count: Optional[int] = None
    secured: Optional[frozenset[int]] = None
    threshold: Fraction = Fraction(1, 2)
    n_min: Optional[int] = None
    corrupted: int = 0
    corrupted_fraction: Optional[Fraction] = None
    node_count: Optional[int] = None
    branches: tuple[tuple[int, int], ...] = ()
    model: AssignmentModel = AssignmentModel.PARTITION
    iterations: int = DEFAULT_ITERATIONS
    master_seed: int = 0

    def topology(self) -> DnnTopology:
        return DnnTopology.with_branches(self.layer_count, dict(self.branches))

    def quorum(self) -> QuorumConfig:
        if self.n_min is not None:
            return QuorumConfig.explicit(self.quorum_size, self.n_min)
        return QuorumConfig(self.quorum_size, self.threshold)

    def secured_layers(self) -> frozenset[int]:
        if self.secured is not None:
            return frozenset(self.secured)
        q = self.layer_count if self.quorum_count is None else self.quorum_count
        if not 0 <= q <= self.layer_count:
            raise ValueError(f"quorum count {q} not in [0, {self.layer_count}]")
        return frozenset(range(q))

    def build(self) -> AttackScenario:
        plan = build_plan(self.topology(), self.secured_layers(), self.quorum())
        n = plan.total_slots if self.node_count is None else self.node_count
        c = self.corrupted
        if self.corrupted_fraction is not None:
            c = floor(Fraction(self.corrupted_fraction) * n)
        return AttackScenario(plan, c, self.model, self.iterations, self.master_seed, n)


SWEEPABLE = ("q", "s", "l", "c", "n_min")


def with_value(spec: ScenarioSpec, vary: str, value: int) -> ScenarioSpec:
    if vary == "q":
        return replace(spec, quorum_count=value, secured=None)
    if vary == "s":
        return replace(spec, quorum_size=value, n_min=None)
    if vary == "l":
        return replace(spec, layer_count=value)
    if vary == "c":
        return replace(spec, corrupted=value, corrupted_fraction=None)
    if vary == "n_min":
        return replace(spec, n_min=value)
    raise ValueError(f"cannot sweep {vary!r}; choose one of {', '.join(SWEEPABLE)}")


def sweep(base: ScenarioSpec, vary: str, values: Sequence[int], workers: int = 1) -> list[tuple[int, SuccessEstimate]]:
    """One estimate per swept value, each with its own seed stream."""
    if vary not in SWEEPABLE:
        raise ValueError(f"cannot sweep {vary!r}; choose one of {', '.join(SWEEPABLE)}")
    scenarios = []
    for i, value in enumerate(values):
        point = replace(with_value(base, vary, value), master_seed=sweep_point_seed(base.master_seed, i))
        try:
            scenarios.append((value, point.build()))
        except ValueError as exc:
            raise ValueError(f"{vary}={value}: {exc}") from exc
    return [(value, estimate_success(sc, workers)) for value, sc in scenarios]
