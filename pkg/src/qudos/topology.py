"""DNN structure, quorum configuration and the binding of layers to validator slots.

A deployment is laid out as a flat list of *slots*. Each layer contributes one
unit per sub-layer (one unit for a sequential layer), and each unit is either a
single validator slot or, when the layer is secured, a quorum of ``size`` slots.
Slots are ordered by layer, then sub-layer, then replica.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import floor
from typing import Iterable, Mapping

import numpy as np


@dataclass(frozen=True)
class Layer:
    """A DNN layer; ``branches`` is 1 for a sequential layer."""

    branches: int = 1

    def __post_init__(self):
        if self.branches < 1:
            raise ValueError(f"branch count must be positive, got {self.branches}")

    @property
    def is_branched(self) -> bool:
        return self.branches > 1


SEQUENTIAL = Layer(1)


def branched(sub_layers: int) -> Layer:
    if sub_layers < 2:
        raise ValueError(f"a branched layer needs at least 2 sub-layers, got {sub_layers}")
    return Layer(sub_layers)


@dataclass(frozen=True)
class DnnTopology:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("a topology needs at least one layer")

    @classmethod
    def sequential(cls, layer_count: int) -> "DnnTopology":
        return cls(tuple(SEQUENTIAL for _ in range(layer_count)))

    @classmethod
    def with_branches(cls, layer_count: int, branches: Mapping[int, int]) -> "DnnTopology":
        """Sequential chain of ``layer_count`` layers with some layers branched.

        ``branches`` maps layer index to its sub-layer count.
        """
        for idx in branches:
            if not 0 <= idx < layer_count:
                raise ValueError(f"branch layer index {idx} out of range for {layer_count} layers")
        return cls(tuple(branched(branches[i]) if i in branches else SEQUENTIAL
                         for i in range(layer_count)))

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def is_sequential(self) -> bool:
        return all(not layer.is_branched for layer in self.layers)


def derive_n_min(size: int, threshold) -> int:
    """Smallest vote count strictly above ``threshold * size``, capped at ``size``.

    ``threshold`` may be a float, int, ``Fraction`` or a string such as ``"1/2"``.
    The cap only binds for ``threshold == 1`` (unanimity).
    """
    if size < 1:
        raise ValueError(f"quorum size must be positive, got {size}")
    t = Fraction(threshold)
    if not 0 < t <= 1:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    return min(size, floor(t * size) + 1)


@dataclass(frozen=True)
class QuorumConfig:
    size: int
    threshold: Fraction = Fraction(1, 2)
    n_min: int = 0

    def __post_init__(self):
        object.__setattr__(self, "threshold", Fraction(self.threshold))
        derived = derive_n_min(self.size, self.threshold)
        if self.n_min == 0:
            object.__setattr__(self, "n_min", derived)
        elif self.n_min != derived:
            raise ValueError(
                f"n_min={self.n_min} inconsistent with size={self.size}, threshold={self.threshold} "
                f"(expected {derived}); use QuorumConfig.explicit to pick n_min directly")

    @classmethod
    def explicit(cls, size: int, n_min: int) -> "QuorumConfig":
        """Quorum with a directly chosen vote threshold.

        ``threshold`` is set to ``(n_min - 1) / size`` so that ``n_min`` is the
        smallest count strictly above it.
        """
        if not 1 <= n_min <= size:
            raise ValueError(f"n_min must lie in [1, {size}], got {n_min}")
        t = Fraction(n_min - 1, size) if n_min > 1 else Fraction(1, 2 * size)
        return cls(size=size, threshold=t, n_min=n_min)


@dataclass(frozen=True)
class Unit:
    """One computational unit: a sequential layer or one sub-layer of a branched layer."""

    layer: int
    sub: int
    secured: bool
    first_slot: int
    width: int


@dataclass(frozen=True)
class DeploymentPlan:
    topology: DnnTopology
    secured_layers: frozenset[int]
    quorum: QuorumConfig
    total_slots: int
    units: tuple[Unit, ...] = field(repr=False, compare=False, default=())

    @property
    def quorum_count(self) -> int:
        return len(self.secured_layers)

    @property
    def n_min(self) -> int:
        return self.quorum.n_min

    def slot_keys(self) -> list[tuple[int, int, int]]:
        """``(layer, sub_layer, replica)`` for every slot, in slot order."""
        return [(u.layer, u.sub, r) for u in self.units for r in range(u.width)]


def build_plan(topology: DnnTopology, secured: Iterable[int], quorum: QuorumConfig) -> DeploymentPlan:
    secured = frozenset(secured)
    for idx in secured:
        if not 0 <= idx < topology.layer_count:
            raise ValueError(f"secured layer index {idx} out of range for {topology.layer_count} layers")
    units = []
    slot = 0
    for li, layer in enumerate(topology.layers):
        is_secured = li in secured
        width = quorum.size if is_secured else 1
        for sub in range(layer.branches):
            units.append(Unit(li, sub, is_secured, slot, width))
            slot += width
    return DeploymentPlan(topology, secured, quorum, slot, tuple(units))


def first_layers(count: int) -> frozenset[int]:
    return frozenset(range(count))


@dataclass(frozen=True)
class NodePool:
    node_count: int
    corrupted: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "corrupted", frozenset(self.corrupted))
        if self.node_count < 1:
            raise ValueError(f"node pool must be nonempty, got {self.node_count}")
        bad = [c for c in self.corrupted if not 0 <= c < self.node_count]
        if bad:
            raise ValueError(f"corrupted node ids out of range: {sorted(bad)}")

    @classmethod
    def first_corrupted(cls, node_count: int, corrupted_count: int) -> "NodePool":
        if not 0 <= corrupted_count <= node_count:
            raise ValueError(f"corrupted count {corrupted_count} not in [0, {node_count}]")
        return cls(node_count, frozenset(range(corrupted_count)))

    @property
    def corrupted_count(self) -> int:
        return len(self.corrupted)


@dataclass(frozen=True)
class SlotAssignment:
    """Node id per slot, indexed in the plan's slot order."""

    nodes: tuple[int, ...]
    keys: tuple[tuple[int, int, int], ...] = field(repr=False, default=())

    def __getitem__(self, key: tuple[int, int, int]) -> int:
        return self.nodes[self.keys.index(key)]

    def as_dict(self) -> dict[tuple[int, int, int], int]:
        return dict(zip(self.keys, self.nodes))

    def is_bijection(self, node_count: int) -> bool:
        return sorted(self.nodes) == list(range(node_count))


def assign_partition(plan: DeploymentPlan, pool: NodePool, rng: np.random.Generator) -> SlotAssignment:
    """Uniformly random bijection between nodes and slots."""
    if pool.node_count != plan.total_slots:
        raise ValueError(
            f"partition model needs one node per slot: pool has {pool.node_count} nodes, "
            f"plan has {plan.total_slots} slots")
    nodes = rng.permutation(pool.node_count)
    return SlotAssignment(tuple(int(v) for v in nodes), tuple(plan.slot_keys()))


def assign_with_replacement(plan: DeploymentPlan, pool: NodePool, rng: np.random.Generator) -> SlotAssignment:
    """Each slot draws its node independently and uniformly from the pool."""
    if pool.node_count < 1:
        raise ValueError("cannot assign from an empty pool")
    nodes = rng.integers(0, pool.node_count, size=plan.total_slots)
    return SlotAssignment(tuple(int(v) for v in nodes), tuple(plan.slot_keys()))
