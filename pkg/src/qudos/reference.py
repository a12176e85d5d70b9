"""Published figure data shipped with the package, and the sweeps that regenerate each figure."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from typing import Optional

from .attack_sim import ScenarioSpec


class CompareMode(str, enum.Enum):
    EXACT = "exact"
    MONTE_CARLO = "montecarlo"
    TREND = "trend"


@dataclass(frozen=True)
class ReferenceSeries:
    figure: str
    label: str
    x_name: str
    mode: CompareMode
    points: tuple[tuple[int, float], ...]

    def label_value(self) -> int:
        return int(self.label.split("=", 1)[1])


@lru_cache(maxsize=None)
def _raw() -> dict:
    with resources.files("qudos").joinpath("data/reference_figures.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def figure_ids() -> list[str]:
    return [f["figure"] for f in _raw()["figures"]]


def load_figure(figure: str) -> list[ReferenceSeries]:
    for fig in _raw()["figures"]:
        if fig["figure"] == figure:
            return [
                ReferenceSeries(figure, s["label"], fig["x"], CompareMode(fig["mode"]),
                                tuple((int(x), float(y)) for x, y in s["points"]))
                for s in fig["series"]
            ]
    raise KeyError(f"no reference data for figure {figure!r}; known: {', '.join(figure_ids())}")


# Pool sizes behind the selection-probability figures.
CURVE_POOLS = {"6a": 100, "6b": 100_000}


def series_spec(series: ReferenceSeries, iterations: int, master_seed: int,
                corrupted_fraction: Fraction = Fraction(1, 10)) -> Optional[ScenarioSpec]:
    """Base scenario that regenerates a simulated series when swept over ``series.x_name``."""
    v = series.label_value()
    fig = series.figure
    common = dict(iterations=iterations, master_seed=master_seed)
    if fig == "7":
        return ScenarioSpec(layer_count=10, quorum_size=3, quorum_count=0, corrupted=v, **common)
    if fig == "8":
        return ScenarioSpec(layer_count=10, quorum_size=7, quorum_count=0, corrupted=v, **common)
    if fig == "9":
        return ScenarioSpec(layer_count=v, quorum_size=3, quorum_count=0,
                            corrupted_fraction=corrupted_fraction, **common)
    if fig == "10a":
        return ScenarioSpec(layer_count=1, quorum_size=5, corrupted=v, **common)
    if fig == "10b":
        return ScenarioSpec(layer_count=5, quorum_size=1, corrupted=v, **common)
    if fig == "11":
        return ScenarioSpec(layer_count=10, quorum_size=11, n_min=6, corrupted=v, **common)
    return None


def is_feasible(spec: ScenarioSpec) -> bool:
    try:
        spec.build()
    except ValueError:
        return False
    return True
