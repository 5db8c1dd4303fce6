"""Ordered weighted averaging over criterion stacks.

Per pixel, criterion values are sorted ascending once; every order-weight
vector then reuses that permutation, which turns an m-map batch from
O(m P n log n) into O(P n log n + m P n). The aggregated value is

    sum_j ( v_(j) w_j / sum_k v_(k) w_k ) * z_(j)

where z_(j) is the j-th smallest criterion value at the pixel and v_(j)
the criterion weight reordered the same way.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CacheMismatch, InfeasibleStrategy, LengthMismatch, NoSolution
from .grid import CriterionStack, CriterionWeights, Raster
from .mapstore import MapStore, mask_digest
from .strategy import DecisionPoint, ExperimentalDesign, OrderWeights, generate_weights


@dataclass(frozen=True)
class PixelPermutationCache:
    """Ascending criterion permutation per valid pixel, plus the gathered
    sorted values/weights derived from it (ties broken by criterion index)."""

    perm: np.ndarray  # (valid pixels, n) int32
    z_sorted: np.ndarray
    v_sorted: np.ndarray
    digest: bytes
    n: int


@dataclass(frozen=True)
class SuitabilityMap:
    raster: Raster
    provenance: DecisionPoint | OrderWeights | None = None


def rank_pixels(stack: CriterionStack) -> PixelPermutationCache:
    """Stable ascending argsort of the criterion values at every valid pixel."""
    z = stack.value_matrix()
    perm = np.argsort(z, axis=1, kind="stable").astype(np.int32)
    z_sorted = np.take_along_axis(z, perm, axis=1)
    v_sorted = stack.criterion_weights.v[perm]
    return PixelPermutationCache(
        perm=perm,
        z_sorted=z_sorted,
        v_sorted=v_sorted,
        digest=mask_digest(stack.meta.ncols, stack.meta.nrows, stack.valid_mask),
        n=stack.n,
    )


def _as_weight_array(w, n: int, what: str) -> np.ndarray:
    arr = w.w if isinstance(w, OrderWeights) else np.asarray(w, dtype=np.float64).reshape(-1)
    if arr.size != n:
        raise LengthMismatch(f"{what} has length {arr.size}, expected {n}")
    return arr


def owa_value(z, v, w) -> float:
    """Aggregate one pixel's criterion values."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    varr = v.v if isinstance(v, CriterionWeights) else np.asarray(v, dtype=np.float64).reshape(-1)
    warr = _as_weight_array(w, z.size, "order weights")
    if varr.size != z.size:
        raise LengthMismatch(f"criterion weights have length {varr.size}, expected {z.size}")
    order = np.argsort(z, kind="stable")
    coef = varr[order] * warr
    return float((coef * z[order]).sum() / coef.sum())


def _map_values(cache: PixelPermutationCache, w: np.ndarray) -> np.ndarray:
    coef = cache.v_sorted * w
    return (coef * cache.z_sorted).sum(axis=1) / coef.sum(axis=1)


def compute_map(stack: CriterionStack, cache: PixelPermutationCache, w: OrderWeights) -> SuitabilityMap:
    """One suitability map for one order-weight vector; nodata preserved."""
    if cache.n != stack.n or cache.digest != mask_digest(
        stack.meta.ncols, stack.meta.nrows, stack.valid_mask
    ):
        raise CacheMismatch("permutation cache was built from a different stack")
    warr = _as_weight_array(w, stack.n, "order weights")
    values = np.full(stack.meta.size, stack.meta.nodata_value)
    values[stack.valid_mask] = _map_values(cache, warr)
    provenance = w.provenance if isinstance(w, OrderWeights) and w.provenance is not None else w
    return SuitabilityMap(raster=Raster(stack.meta, values), provenance=provenance)


def batch_compute(
    stack: CriterionStack,
    design: ExperimentalDesign,
    n: int,
    store_path: str | Path,
    workers: int = 1,
) -> tuple[MapStore, list[OrderWeights]]:
    """Compute and persist one map per design point, in design order.

    Maps are streamed to a binary store to bound memory; each record is
    written at its own offset, so the output bytes do not depend on the
    worker count. Weight-generation failures are re-raised with the index
    of the offending design point (the smallest index when several fail).
    """
    if n != stack.n:
        raise LengthMismatch(f"design expects {n} criteria, stack has {stack.n}")
    cache = rank_pixels(stack)
    digest = mask_digest(stack.meta.ncols, stack.meta.nrows, stack.valid_mask)
    pixel_count = int(stack.valid_mask.sum())
    store = MapStore.create(store_path, m=len(design.points), pixel_count=pixel_count, digest=digest)

    weights: list[OrderWeights | None] = [None] * len(design.points)
    failures: dict[int, Exception] = {}

    def run(i: int) -> None:
        try:
            w = generate_weights(design.points[i], n)
        except (NoSolution, InfeasibleStrategy) as exc:
            failures[i] = exc
            return
        weights[i] = w
        store.write_row(i, _map_values(cache, w.w))

    if workers <= 1:
        for i in range(len(design.points)):
            run(i)
            if i in failures:
                break
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(design.points))))

    if failures:
        i = min(failures)
        exc = failures[i]
        p = design.points[i]
        if isinstance(exc, NoSolution):
            raise NoSolution(f"design point {i} (r={p.r}, t={p.t}): {exc}", design_index=i) from exc
        raise InfeasibleStrategy(f"design point {i} (r={p.r}, t={p.t}): {exc}") from exc

    store.flush()
    return store, weights  # type: ignore[return-value]
