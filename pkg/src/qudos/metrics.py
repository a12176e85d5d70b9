"""Closed-form security metrics: corruption factors and corrupted-node selection probabilities."""

from __future__ import annotations

from fractions import Fraction
from math import comb, exp, fsum, log, log1p, prod
from typing import Iterable, Optional

from .topology import DnnTopology

# Pools up to this size are evaluated with exact integer binomials.
EXACT_POOL_LIMIT = 10_000


def _check_unit_interval(value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"corruption factor must lie in [0, 1], got {value}")
    return value


def corruption_factor_layer(topology: DnnTopology, layer_index: int, sub_index: Optional[int] = None) -> float:
    """Share of passes that traverse the given layer (or sub-layer).

    Every pass visits every layer of the chain, so a sequential layer scores 1.
    A branched layer with ``s`` sub-layers scores ``1/s`` per sub-layer.
    """
    if not 0 <= layer_index < topology.layer_count:
        raise IndexError(f"layer index {layer_index} out of range")
    layer = topology.layers[layer_index]
    if not layer.is_branched:
        if sub_index is not None:
            raise ValueError(f"layer {layer_index} is sequential; no sub-layer index allowed")
        return 1.0
    if sub_index is None:
        raise ValueError(f"layer {layer_index} is branched; a sub-layer index is required")
    if not 0 <= sub_index < layer.branches:
        raise IndexError(f"sub-layer index {sub_index} out of range for {layer.branches} branches")
    return 1.0 / layer.branches


def corruption_factor_set(factors: Iterable[float]) -> float:
    """Combined factor of a set of layers, treating each as an independent event."""
    miss = 1.0
    for f in factors:
        miss *= 1.0 - _check_unit_interval(f)
    return 1.0 - miss


def attack_success_probability(factor: float) -> float:
    # An oblivious attacker succeeds exactly when a pass touches a corrupted unit.
    return _check_unit_interval(factor)


def _check_query(n: int, c: int, m: int) -> None:
    if n < 0 or not 0 <= c <= n or not 0 <= m <= n:
        raise ValueError(f"invalid selection query: need 0 <= c <= n and 0 <= m <= n (n={n}, c={c}, m={m})")


def selection_pmf_exact(n: int, c: int, m: int, x: int) -> Fraction:
    """Probability of exactly ``x`` corrupted among ``m`` validators drawn from ``n``, as a rational."""
    _check_query(n, c, m)
    if not 0 <= x <= min(c, m):
        raise ValueError(f"hit count {x} not in [0, min(c, m)] = [0, {min(c, m)}]")
    return Fraction(comb(c, x) * comb(n - c, m - x), comb(n, m))


def selection_pmf(n: int, c: int, m: int, x: int) -> float:
    """Hypergeometric probability of drawing exactly ``x`` corrupted validators.

    Exact rational arithmetic up to ``EXACT_POOL_LIMIT`` nodes. Larger pools sum
    the logarithms of the ordered-draw factors ``C(m, x) * prod(hits) * prod(misses)``,
    which neither overflows nor underflows on the way to the result.
    """
    _check_query(n, c, m)
    if not 0 <= x <= min(c, m):
        raise ValueError(f"hit count {x} not in [0, min(c, m)] = [0, {min(c, m)}]")
    if m - x > n - c:
        return 0.0
    if n <= EXACT_POOL_LIMIT:
        return float(selection_pmf_exact(n, c, m, x))
    terms = [log(comb(m, x))]
    terms += [log((c - i) / (n - i)) for i in range(x)]
    terms += [log1p(-(c - x) / (n - x - j)) for j in range(m - x)]
    return exp(fsum(terms))


def selection_at_least_one(n: int, c: int, m: int) -> float:
    """Probability that ``m`` validators drawn from ``n`` include at least one of the ``c`` corrupted."""
    _check_query(n, c, m)
    if m > n - c:
        return 1.0
    return 1.0 - prod((n - c - i) / (n - i) for i in range(m))


def selection_at_least_one_exact(n: int, c: int, m: int) -> Fraction:
    _check_query(n, c, m)
    return 1 - Fraction(comb(n - c, m), comb(n, m))
