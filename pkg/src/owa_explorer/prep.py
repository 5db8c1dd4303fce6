"""Criterion preparation: capacity matrix scoring, modifiers, inversion.

Turns a land-cover class raster plus an expert capacity matrix (and
optional biophysical modifier rasters) into normalized criterion layers:
per cell, the mean expert score is scaled to [0, 1], multiplied by the
modifier factor, and complemented so that 0 capacity to supply a service
means fully suitable for development and 1 means unsuitable.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AlignmentError,
    AllInvalid,
    NegativeDistance,
    NegativeValue,
    OutOfRange,
    UnknownCategory,
    UnknownClass,
    UnknownService,
    ZeroWeight,
)
from .grid import Raster

DEFAULT_SCORE_MAX = 5.0

# Built-in categorical factor tables.
# Soil quality: 16 fertility categories, 1.0 for the most fertile down by
# 0.05 per category to 0.25 for salted ground.
SOIL_QUALITY_FACTORS = {k: 1.0 - 0.05 * (k - 1) for k in range(1, 17)}
# Ecologically important habitats: full factor inside protected areas.
PROTECTED_AREA_FACTORS = {"inside": 1.0, "outside": 0.75}
# Flood hazard zones from risk prevention plans.
FLOODING_FACTORS = {"high": 1.0, "medium": 0.5, "none": 0.0}
# Fire hazard: six levels, never below 0.5 (some fire risk always remains).
FIRE_HAZARD_FACTORS = {
    "very_high": 1.0,
    "high": 0.9,
    "medium": 0.8,
    "low": 0.7,
    "very_low": 0.6,
    "none": 0.5,
}

# Integer-coded variants of the built-in tables for raster application.
# Code conventions: protected areas 1=inside 0=outside; flooding 1=high
# 2=medium 3=none; fire hazard 1=very high .. 6=none.
CATEGORICAL_BUILTINS: dict[str, dict[int, float]] = {
    "soil_quality": dict(SOIL_QUALITY_FACTORS),
    "protected_area": {1: 1.0, 0: 0.75},
    "flooding": {1: 1.0, 2: 0.5, 3: 0.0},
    "fire_hazard": {1: 1.0, 2: 0.9, 3: 0.8, 4: 0.7, 5: 0.6, 6: 0.5},
}

ROAD_NEAR_M = 300.0
ROAD_FAR_M = 1000.0
ROAD_FLOOR = 0.5


@dataclass(frozen=True)
class CapacityMatrix:
    """Expert scores for each (land-cover class, service) pair.

    Scores run from 0 (no capacity) to score_max. A pair with no recorded
    score counts as 0 capacity, the blank-cell convention of capacity
    matrices.
    """

    luc_classes: tuple[int, ...]
    services: tuple[str, ...]
    scores: dict[tuple[int, str], tuple[float, ...]]
    score_max: float = DEFAULT_SCORE_MAX
    n_experts: int = field(default=0)

    def __post_init__(self):
        if self.n_experts < 1:
            raise OutOfRange("capacity matrix needs at least one expert")
        for (cls, svc), vals in self.scores.items():
            for v in vals:
                if not (0.0 <= v <= self.score_max):
                    raise OutOfRange(
                        f"score {v} for class {cls}, service {svc!r} outside [0, {self.score_max}]"
                    )


@dataclass(frozen=True)
class ExpertVotes:
    """How many of the polled experts consider a service important."""

    count: int
    total: int
    override_weight: float | None = None

    def __post_init__(self):
        if self.total < 1:
            raise OutOfRange(f"total experts must be >= 1, got {self.total}")
        if not (0 <= self.count <= self.total):
            raise OutOfRange(f"vote count {self.count} outside [0, {self.total}]")


@dataclass(frozen=True)
class ModifierRule:
    """How a biophysical raster scales the expert score.

    kind "categorical" looks integer cell codes up in `table`;
    "continuous_98" rescales by 98% of the raster maximum; and
    "piecewise_distance" maps a distance raster through the road
    accessibility ramp (1 out to d1, linear down to `floor` at d2).
    """

    kind: str
    table: dict[int, float] | None = None
    d1: float = ROAD_NEAR_M
    d2: float = ROAD_FAR_M
    floor: float = ROAD_FLOOR

    def __post_init__(self):
        if self.kind not in ("categorical", "continuous_98", "piecewise_distance"):
            raise OutOfRange(f"unknown modifier kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.table:
                raise OutOfRange("categorical modifier needs a factor table")
            for code, factor in self.table.items():
                if not (0.0 <= factor <= 1.0):
                    raise OutOfRange(f"factor {factor} for category {code} outside [0, 1]")
        if self.kind == "piecewise_distance":
            if not (0.0 < self.d1 < self.d2):
                raise OutOfRange(f"need 0 < d1 < d2, got d1={self.d1}, d2={self.d2}")
            if not (0.0 <= self.floor <= 1.0):
                raise OutOfRange(f"floor {self.floor} outside [0, 1]")


def mean_expert_score(matrix: CapacityMatrix, luc_class: int, service: str) -> float:
    """Mean score over experts, scaled to [0, 1]."""
    if luc_class not in matrix.luc_classes:
        raise UnknownClass(f"land-cover class {luc_class} not in the capacity matrix")
    if service not in matrix.services:
        raise UnknownService(f"service {service!r} not in the capacity matrix")
    vals = matrix.scores.get((luc_class, service), ())
    if not vals:
        return 0.0
    return float(np.mean(vals)) / matrix.score_max


def invert_to_suitability(capacity: float) -> float:
    """Complement a [0, 1] capacity: high service capacity, low suitability."""
    if not (0.0 <= capacity <= 1.0):
        raise OutOfRange(f"capacity {capacity} outside [0, 1]")
    return 1.0 - capacity


def categorical_factor(rule_or_table, category) -> float:
    """Look a category up in a factor table (a ModifierRule or a plain dict)."""
    table = rule_or_table.table if isinstance(rule_or_table, ModifierRule) else rule_or_table
    try:
        return table[category]
    except KeyError:
        raise UnknownCategory(f"category {category!r} not in the factor table") from None


def continuous_98(raster: Raster) -> Raster:
    """Rescale so 98% of the valid maximum maps to factor 1 (clamped above)."""
    valid = raster.valid_mask
    if not valid.any():
        raise AllInvalid("raster has no valid cells")
    vals = raster.values[valid]
    if (vals < 0).any():
        raise NegativeValue(f"negative value {vals.min()} in a non-negative raster")
    top = 0.98 * vals.max()
    out = np.array(raster.values)
    if top > 0.0:
        out[valid] = np.minimum(1.0, vals / top)
    else:
        out[valid] = 0.0
    return Raster(raster.meta, out)


def road_distance_factor(
    d: float, d1: float = ROAD_NEAR_M, d2: float = ROAD_FAR_M, floor: float = ROAD_FLOOR
) -> float:
    """Accessibility ramp: 1 within d1 of a road, down to `floor` at d2."""
    if d < 0:
        raise NegativeDistance(f"distance {d} is negative")
    if d <= d1:
        return 1.0
    if d >= d2:
        return floor
    return 1.0 - (1.0 - floor) * (d - d1) / (d2 - d1)


def criterion_weight_from_votes(votes: ExpertVotes) -> float:
    """Vote fraction as criterion weight; an override pins it (e.g. to 1)."""
    if votes.override_weight is not None:
        if votes.override_weight <= 0:
            raise ZeroWeight(f"override weight must be positive, got {votes.override_weight}")
        return float(votes.override_weight)
    if votes.count == 0:
        raise ZeroWeight("no expert considered the service important; weight would be 0")
    return votes.count / votes.total


def apply_modifier(rule: ModifierRule, raster: Raster) -> Raster:
    """Factor raster in [0, 1] from a biophysical raster; nodata propagates."""
    valid = raster.valid_mask
    out = np.array(raster.values)
    vals = raster.values[valid]
    if rule.kind == "continuous_98":
        return continuous_98(raster)
    if rule.kind == "piecewise_distance":
        if (vals < 0).any():
            raise NegativeDistance(f"negative distance {vals.min()} in the raster")
        ramp = 1.0 - (1.0 - rule.floor) * (vals - rule.d1) / (rule.d2 - rule.d1)
        out[valid] = np.clip(ramp, rule.floor, 1.0)
        return Raster(raster.meta, out)
    codes = np.rint(vals)
    if (np.abs(vals - codes) > 1e-6).any():
        bad = vals[np.abs(vals - codes) > 1e-6][0]
        raise UnknownCategory(f"cell value {bad} is not an integer category code")
    factors = np.empty(vals.shape)
    lookup = {}
    for code in np.unique(codes):
        lookup[code] = categorical_factor(rule, int(code))
    for code, factor in lookup.items():
        factors[codes == code] = factor
    out[valid] = factors
    return Raster(raster.meta, out)


def build_criterion(
    luc: Raster,
    matrix: CapacityMatrix,
    service: str,
    rule: ModifierRule | None = None,
    modifier: Raster | None = None,
) -> Raster:
    """One normalized criterion layer from land cover, scores and a modifier.

    Per cell: capacity = mean expert score for the cell's class, times the
    modifier factor (1 when absent), complemented to suitability. A nodata
    cell in either input raster is nodata in the output.
    """
    if (rule is None) != (modifier is None):
        raise AlignmentError("a modifier rule and its raster must be given together")
    factor = None
    if rule is not None:
        if not luc.meta.aligned_with(modifier.meta):
            raise AlignmentError("modifier raster is not aligned with the land-cover raster")
        factor = apply_modifier(rule, modifier)

    valid = luc.valid_mask
    if factor is not None:
        valid = valid & factor.valid_mask
    codes_f = luc.values[valid]
    codes = np.rint(codes_f)
    if (np.abs(codes_f - codes) > 1e-6).any():
        bad = codes_f[np.abs(codes_f - codes) > 1e-6][0]
        raise UnknownClass(f"land-cover cell value {bad} is not an integer class code")
    capacity = np.empty(codes.shape)
    for code in np.unique(codes):
        capacity[codes == code] = mean_expert_score(matrix, int(code), service)
    if factor is not None:
        capacity = capacity * factor.values[valid]

    out = np.full(luc.meta.size, luc.meta.nodata_value)
    out[valid] = 1.0 - capacity
    return Raster(luc.meta, out)


def load_capacity_matrix(source: str | Path, score_max: float = DEFAULT_SCORE_MAX) -> CapacityMatrix:
    """Read a capacity matrix CSV with columns expert_id, luc_class, service, score."""
    text = Path(source).read_text() if isinstance(source, Path) else source
    scores: dict[tuple[int, str], list[float]] = {}
    experts: set[str] = set()
    classes: set[int] = set()
    services: set[str] = set()
    for row in csv.DictReader(io.StringIO(text)):
        expert = row["expert_id"].strip()
        cls = int(row["luc_class"])
        svc = row["service"].strip()
        score = float(row["score"])
        experts.add(expert)
        classes.add(cls)
        services.add(svc)
        scores.setdefault((cls, svc), []).append(score)
    return CapacityMatrix(
        luc_classes=tuple(sorted(classes)),
        services=tuple(sorted(services)),
        scores={k: tuple(v) for k, v in scores.items()},
        score_max=score_max,
        n_experts=len(experts),
    )


def load_expert_votes(source: str | Path) -> dict[str, ExpertVotes]:
    """Read votes per service from a CSV: service, votes, total[, override_weight]."""
    text = Path(source).read_text() if isinstance(source, Path) else source
    votes: dict[str, ExpertVotes] = {}
    for row in csv.DictReader(io.StringIO(text)):
        override = row.get("override_weight", "")
        override_val = float(override) if override not in ("", None) else None
        votes[row["service"].strip()] = ExpertVotes(
            count=int(row["votes"]),
            total=int(row["total"]),
            override_weight=override_val,
        )
    return votes
