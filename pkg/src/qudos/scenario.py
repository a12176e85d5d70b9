"""Scenario files: INI-style sections describing an attack scenario and an optional sweep.

Example::

    [topology]
    layers = 10
    branches = 3:2          ; optional, layer:sub_layers pairs

    [quorum]
    size = 11
    threshold = 1/2         ; or n_min = 6

    [deployment]
    quorum_count = all      ; or an integer, or: secured = 0, 2, 4

    [pool]
    corrupted = 20          ; or corrupted_fraction = 1/10
    nodes = 110             ; optional, defaults to the slot count

    [simulation]
    model = partition       ; or with_replacement
    iterations = 100000
    master_seed = 7

    [sweep]
    parameter = n_min
    values = 6..11          ; inclusive ranges and comma lists
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .attack_sim import SWEEPABLE, AssignmentModel, ScenarioSpec

ALLOWED = {
    "topology": {"layers", "branches"},
    "quorum": {"size", "threshold", "n_min"},
    "deployment": {"quorum_count", "secured"},
    "pool": {"nodes", "corrupted", "corrupted_fraction"},
    "simulation": {"model", "iterations", "master_seed", "workers"},
    "sweep": {"parameter", "values"},
}
REQUIRED = {"topology": {"layers"}, "quorum": {"size"}}


class ScenarioError(ValueError):
    """Invalid scenario file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None, source: str = "<scenario>"):
        self.line = line
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class Scenario:
    spec: ScenarioSpec
    sweep_parameter: Optional[str] = None
    sweep_values: tuple[int, ...] = ()
    workers: int = 1


def parse_int_list(text: str) -> list[int]:
    """Parse ``"0..3, 7"`` into ``[0, 1, 2, 3, 7]``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(-?\d+)\s*\.\.\s*(-?\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise ValueError(f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("empty list")
    return out


def _line_index(text: str) -> dict[tuple[str, Optional[str]], int]:
    index: dict[tuple[str, Optional[str]], int] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), no)
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
        if section is not None:
            index.setdefault((section, key), no)
    return index


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), delimiters=("=",),
                                       interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ScenarioError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, source) from None
    except configparser.DuplicateSectionError as exc:
        raise ScenarioError(f"duplicate section [{exc.section}]", exc.lineno, source) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ScenarioError("content before the first [section]", exc.lineno, source) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ScenarioError("malformed line", line, source) from None

    lines = _line_index(text)
    for section in parser.sections():
        if section not in ALLOWED:
            raise ScenarioError(f"unknown section [{section}]", lines.get((section, None)), source)
        for key in parser[section]:
            if key not in ALLOWED[section]:
                raise ScenarioError(f"unknown key {key!r} in [{section}]", lines.get((section, key)), source)
    for section, keys in REQUIRED.items():
        for key in keys:
            if not parser.has_option(section, key):
                raise ScenarioError(f"missing required key {key!r} in [{section}]",
                                    lines.get((section, None)), source)

    def get(section: str, key: str, convert, default=None):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key)
        try:
            return convert(raw.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ScenarioError(f"bad value for {key!r}: {raw!r} ({exc})", lines.get((section, key)), source) from None

    def branch_pairs(raw: str) -> tuple[tuple[int, int], ...]:
        pairs = []
        for part in raw.split(","):
            layer, _, subs = part.strip().partition(":")
            pairs.append((int(layer), int(subs)))
        return tuple(pairs)

    def quorum_count(raw: str) -> Optional[int]:
        return None if raw.lower() == "all" else int(raw)

    if parser.has_option("quorum", "threshold") and parser.has_option("quorum", "n_min"):
        raise ScenarioError("give either threshold or n_min, not both", lines.get(("quorum", "n_min")), source)
    if parser.has_option("deployment", "quorum_count") and parser.has_option("deployment", "secured"):
        raise ScenarioError("give either quorum_count or secured, not both",
                            lines.get(("deployment", "secured")), source)
    if parser.has_option("pool", "corrupted") and parser.has_option("pool", "corrupted_fraction"):
        raise ScenarioError("give either corrupted or corrupted_fraction, not both",
                            lines.get(("pool", "corrupted_fraction")), source)

    secured = get("deployment", "secured", lambda s: frozenset(parse_int_list(s)))
    spec = ScenarioSpec(
        layer_count=get("topology", "layers", int),
        branches=get("topology", "branches", branch_pairs, ()),
        quorum_size=get("quorum", "size", int),
        threshold=get("quorum", "threshold", Fraction, Fraction(1, 2)),
        n_min=get("quorum", "n_min", int),
        quorum_count=get("deployment", "quorum_count", quorum_count),
        secured=secured,
        node_count=get("pool", "nodes", int),
        corrupted=get("pool", "corrupted", int, 0),
        corrupted_fraction=get("pool", "corrupted_fraction", Fraction),
        model=get("simulation", "model", AssignmentModel, AssignmentModel.PARTITION),
        iterations=get("simulation", "iterations", int, 100_000),
        master_seed=get("simulation", "master_seed", int, 0),
    )
    workers = get("simulation", "workers", int, 1)

    parameter = get("sweep", "parameter", str)
    values = tuple(get("sweep", "values", parse_int_list, []))
    if parser.has_section("sweep"):
        if parameter not in SWEEPABLE:
            raise ScenarioError(f"sweep parameter must be one of {', '.join(SWEEPABLE)}, got {parameter!r}",
                                lines.get(("sweep", "parameter"), lines.get(("sweep", None))), source)
        if not values:
            raise ScenarioError("sweep needs values", lines.get(("sweep", None)), source)
    return Scenario(spec, parameter, values, workers)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), source=str(path))
