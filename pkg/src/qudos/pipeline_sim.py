"""Simulated inference through a quorum-replicated layer pipeline.

Each pass starts at the gateway, runs through every layer in order and ends
at the accumulator. Secured units run on a quorum whose members all receive
the previously decided payload. Their outputs are voted and only the decided
value moves on. Branched layers run every sub-layer on the same input and
concatenate the results.

Payloads are integer vectors with a *taint*: the set of corruption tags that
contributed to them. Honest computation keeps the taint. A corrupted node adds
its own tag. A corrupted result therefore never equals an honest one, and the
taint of the final payload shows which corruptions got through.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .topology import DeploymentPlan, DnnTopology, SlotAssignment

MODULUS = 65_521


@dataclass(frozen=True)
class Payload:
    values: tuple[int, ...]
    taint: frozenset = frozenset()

    @property
    def clean(self) -> bool:
        return not self.taint


@dataclass(frozen=True)
class LayerFunction:
    """Elementwise affine map ``x -> (scale * x + shift) mod MODULUS``."""

    scale: int
    shift: int

    def __call__(self, payload: Payload) -> Payload:
        return Payload(tuple((self.scale * v + self.shift) % MODULUS for v in payload.values), payload.taint)


def default_functions(topology: DnnTopology, seed: int = 0) -> dict[tuple[int, int], LayerFunction]:
    rng = np.random.default_rng(seed)
    funcs = {}
    for li, layer in enumerate(topology.layers):
        for sub in range(layer.branches):
            funcs[(li, sub)] = LayerFunction(int(rng.integers(2, MODULUS)), int(rng.integers(0, MODULUS)))
    return funcs


class NodeBehavior(str, enum.Enum):
    HONEST = "honest"
    CORRUPTED_RANDOM = "corrupted_random"
    CORRUPTED_COORDINATED = "corrupted_coordinated"


@dataclass(frozen=True)
class VoteOutcome:
    decided: Optional[Payload]
    dissent: int
    top_votes: int

    @property
    def conclusive(self) -> bool:
        return self.decided is not None


def quorum_vote(results: Sequence[Hashable], n_min: int) -> VoteOutcome:
    """Pick the value returned by at least ``n_min`` members.

    ``dissent`` counts members disagreeing with the most common value. If no
    value reaches ``n_min``, or two values tie above it, the vote is
    inconclusive.
    """
    if not results:
        raise ValueError("cannot vote on an empty result list")
    if not 1 <= n_min <= len(results):
        raise ValueError(f"n_min must lie in [1, {len(results)}], got {n_min}")
    ranked = Counter(results).most_common()
    top, votes = ranked[0]
    dissent = len(results) - votes
    if votes < n_min or (len(ranked) > 1 and ranked[1][1] == votes):
        return VoteOutcome(None, dissent, votes)
    return VoteOutcome(top, dissent, votes)


@dataclass
class InferenceReport:
    final_payload: Optional[Payload]
    matches_clean_reference: bool
    anomalies: list[tuple[int, int]]
    visit_counts: Counter
    unit_visits: Counter = field(default_factory=Counter)
    halted_at: Optional[int] = None

    @property
    def attack_succeeded(self) -> bool:
        return self.final_payload is not None and not self.matches_clean_reference


def _node_output(behavior: NodeBehavior, node: int, unit: tuple[int, int], func: LayerFunction,
                 payload: Payload, pass_index: int, seed: int) -> Payload:
    honest = func(payload)
    if behavior is NodeBehavior.HONEST:
        return honest
    if behavior is NodeBehavior.CORRUPTED_COORDINATED:
        tag = ("coordinated", unit)
        values = tuple((v + 1) % MODULUS for v in honest.values)
    else:
        # Tag carries the node id, so two random corruptions never coincide.
        tag = ("random", node, unit, pass_index)
        rng = np.random.default_rng([seed, node, unit[0], unit[1], pass_index])
        values = tuple(int(v) for v in rng.integers(0, MODULUS, size=len(honest.values)))
    return Payload(values, payload.taint | {tag})


def clean_reference(topology: DnnTopology, functions: Mapping[tuple[int, int], LayerFunction],
                    payload: Payload) -> Payload:
    for li, layer in enumerate(topology.layers):
        outs = [functions[(li, sub)](payload) for sub in range(layer.branches)]
        payload = _join(outs)
    return payload


def _join(outputs: Sequence[Payload]) -> Payload:
    if len(outputs) == 1:
        return outputs[0]
    values = tuple(v for p in outputs for v in p.values)
    taint = frozenset().union(*(p.taint for p in outputs))
    return Payload(values, taint)


def execute_inference(
    topology: DnnTopology,
    plan: DeploymentPlan,
    assignment: SlotAssignment,
    behaviors: Mapping[int, NodeBehavior],
    payload: Payload,
    functions: Optional[Mapping[tuple[int, int], LayerFunction]] = None,
    pass_index: int = 0,
    seed: int = 0,
) -> InferenceReport:
    if len(assignment.nodes) != plan.total_slots:
        raise ValueError(f"assignment covers {len(assignment.nodes)} slots, plan has {plan.total_slots}")
    missing = {n for n in assignment.nodes if n not in behaviors}
    if missing:
        raise ValueError(f"no behavior defined for nodes {sorted(missing)}")
    functions = functions or default_functions(topology)
    reference = clean_reference(topology, functions, payload)

    visits: Counter = Counter()
    unit_visits: Counter = Counter()
    anomalies: list[tuple[int, int]] = []
    current = payload
    units_by_layer: dict[int, list] = {}
    for unit in plan.units:
        units_by_layer.setdefault(unit.layer, []).append(unit)

    for li in range(topology.layer_count):
        outputs = []
        for unit in units_by_layer[li]:
            key = (unit.layer, unit.sub)
            members = assignment.nodes[unit.first_slot:unit.first_slot + unit.width]
            results = []
            for node in members:
                visits[node] += 1
                unit_visits[key] += 1
                results.append(_node_output(NodeBehavior(behaviors[node]), node, key, functions[key],
                                            current, pass_index, seed))
            if not unit.secured:
                outputs.append(results[0])
                continue
            vote = quorum_vote(results, plan.n_min)
            if vote.dissent:
                anomalies.append((li, vote.dissent))
            if not vote.conclusive:
                return InferenceReport(None, False, anomalies, visits, unit_visits, halted_at=li)
            outputs.append(vote.decided)
        current = _join(outputs)

    return InferenceReport(current, current == reference, anomalies, visits, unit_visits)


def empirical_corruption_factor(reports: Iterable[InferenceReport], layer: Optional[int] = None,
                                sub: Optional[int] = None, node: Optional[int] = None) -> float:
    """Share of visits that landed on a target, measured over many passes.

    For a node or a whole layer the denominator is the number of passes. For a
    sub-layer it is the total visits of its layer, so each of ``s`` equally
    visited sub-layers scores ``1/s``. Replicas of one unit count as one visit.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    passes = len(reports)
    if node is not None:
        return sum(r.visit_counts[node] for r in reports) / passes

    def unit_passes(r: InferenceReport, key: tuple[int, int]) -> int:
        # Count each pass through a unit once, however many replicas ran it.
        return 1 if r.unit_visits[key] > 0 else 0

    if layer is None:
        raise ValueError("give a node, a layer, or a layer and sub-layer")
    keys = sorted(k for r in reports for k in r.unit_visits if k[0] == layer)
    keys = sorted(set(keys))
    if sub is None:
        hits = sum(1 for r in reports if any(unit_passes(r, k) for k in keys))
        return hits / passes
    total = sum(unit_passes(r, k) for r in reports for k in keys)
    if total == 0:
        raise ValueError(f"layer {layer} was never visited")
    return sum(unit_passes(r, (layer, sub)) for r in reports) / total
