"""End-to-end orchestration: config, synthetic data, the full run, re-analysis.

A run is deterministic: with the same inputs, config and seed, every CSV,
grid and map-store byte is reproduced exactly, whatever the worker count.
The run manifest (config snapshot, input digests, stage durations) is the
only output containing wall-clock information.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import time
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import (
    cluster_summaries,
    export_segmentation,
    pairwise_euclidean,
    suggest_k,
    variance_ratio_curve,
    ward_linkage,
    cut,
)
from .errors import ConfigError, DataError
from .grid import GridMeta, Raster, build_stack, parse_ascii_grid, write_ascii_grid
from .mapstore import MapStore, mask_digest
from .owa import batch_compute
from .strategy import DecisionPoint, ExperimentalDesign, sample_design

DEFAULT_MEMORY_BUDGET_MIB = 512


@dataclass
class PipelineConfig:
    stack_manifest: Path
    m: int = 1000
    seed: int = 0
    k: int | None = None  # None = emit the curve and a suggestion only
    k_max: int = 15
    out: Path = Path("out")
    memory_budget_mib: int = DEFAULT_MEMORY_BUDGET_MIB
    workers: int | None = None  # None = available hardware parallelism
    criteria: int | None = None
    write_distances: bool = False

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError(f"m must be >= 2, got {self.m}")
        if self.k_max > self.m:
            raise ConfigError(f"k_max ({self.k_max}) cannot exceed m ({self.m})")
        if self.k is not None and not (1 <= self.k <= self.m):
            raise ConfigError(f"k must be in [1, m], got {self.k}")
        if self.workers is None:
            self.workers = os.cpu_count() or 1
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.memory_budget_mib < 1:
            raise ConfigError(f"memory budget must be >= 1 MiB, got {self.memory_budget_mib}")

    @property
    def memory_budget(self) -> int:
        return self.memory_budget_mib * 1024 * 1024


_CONFIG_KEYS = {
    "stack_manifest", "m", "seed", "k", "k_max", "out",
    "memory_budget_mib", "workers", "criteria", "write_distances",
}


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Parse a flat `key = value` config file; overrides (from flags) win."""
    path = Path(path)
    raw: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items() if v is not None})
    if "stack_manifest" not in raw:
        raise ConfigError(f"{path}: missing required key 'stack_manifest'")

    def as_int(key: str, default: int) -> int:
        if key not in raw:
            return default
        try:
            return int(raw[key])
        except ValueError:
            raise ConfigError(f"config key {key!r} must be an integer, got {raw[key]!r}") from None

    k_raw = raw.get("k", "auto").strip().lower()
    if k_raw in ("auto", "auto-suggest", ""):
        k = None
    else:
        try:
            k = int(k_raw)
        except ValueError:
            raise ConfigError(f"config key 'k' must be an integer or 'auto', got {k_raw!r}") from None

    base = path.parent
    return PipelineConfig(
        stack_manifest=(base / raw["stack_manifest"]).resolve(),
        m=as_int("m", 1000),
        seed=as_int("seed", 0),
        k=k,
        k_max=as_int("k_max", 15),
        out=(base / raw["out"]).resolve() if "out" in raw else Path("out").resolve(),
        memory_budget_mib=as_int("memory_budget_mib", DEFAULT_MEMORY_BUDGET_MIB),
        workers=as_int("workers", 0) or None,
        criteria=as_int("criteria", 0) or None,
        write_distances=raw.get("write_distances", "false").strip().lower() in ("1", "true", "yes"),
    )


def load_stack_manifest(path: str | Path):
    """Read the stack manifest: one `name path weight` row per criterion.

    The weight column accepts either a number or a votes/total fraction
    like `7/13`. Paths are relative to the manifest file.
    """
    path = Path(path)
    base = path.parent
    layers = []
    weights = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(",") if "," in line else line.split()
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 'name,path,weight', got {line!r}")
        name, grid_path, weight_s = (p.strip() for p in parts)
        if name == "name" and weight_s == "weight":
            continue  # header row
        if "/" in weight_s:
            num, den = weight_s.split("/", 1)
            weight = float(num) / float(den)
        else:
            weight = float(weight_s)
        raster = parse_ascii_grid((base / grid_path).read_text())
        layers.append((name, raster))
        weights.append(weight)
    if not layers:
        raise DataError(f"{path}: empty stack manifest")
    return layers, weights


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    inputs: dict[str, str]
    version: str
    started: str
    finished: str
    durations: dict[str, float]

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        return cls(**json.loads(path.read_text()))


def verify_manifest(out_dir: str | Path) -> bool:
    """Re-hash the recorded inputs; True iff all digests still match."""
    manifest = RunManifest.read(Path(out_dir) / "run_manifest.json")
    return all(
        Path(p).exists() and file_digest(Path(p)) == digest
        for p, digest in manifest.inputs.items()
    )


def synth_generate(width: int, height: int, n: int, seed: int, out_dir: str | Path) -> Path:
    """Write a synthetic criterion stack: smooth seeded fields in [0, 1].

    Each layer is a min-max normalized mixture of low-frequency cosine
    waves; the last layer gets ~2% nodata cells to exercise masking. A
    votes CSV and a stack manifest (weights as votes/total fractions)
    accompany the grids.
    """
    if width < 8 or height < 8:
        raise ConfigError(f"synthetic grid must be at least 8x8, got {width}x{height}")
    if n < 2:
        raise ConfigError(f"need at least 2 criteria, got {n}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    meta = GridMeta(ncols=width, nrows=height, xllcorner=0.0, yllcorner=0.0, cellsize=5.0)
    xs = np.arange(width) / width
    ys = np.arange(height) / height
    gx, gy = np.meshgrid(xs, ys)

    total_experts = 13
    manifest_lines = ["name,path,weight"]
    votes_lines = ["service,votes,total"]
    for j in range(n):
        field = np.zeros((height, width))
        for _ in range(6):
            fx, fy = rng.integers(1, 4, size=2)
            amp = rng.uniform(0.3, 1.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            field += amp * np.cos(2.0 * np.pi * (fx * gx + fy * gy) + phase)
        lo, hi = field.min(), field.max()
        field = (field - lo) / (hi - lo)
        values = field.reshape(-1)
        if j == n - 1:
            n_bad = max(1, int(0.02 * values.size))
            bad = rng.choice(values.size, size=n_bad, replace=False)
            values = np.array(values)
            values[bad] = meta.nodata_value
        name = f"criterion_{j:02d}"
        (out_dir / f"{name}.asc").write_text(write_ascii_grid(Raster(meta, values)))
        votes = int(rng.integers(1, total_experts + 1))
        manifest_lines.append(f"{name},{name}.asc,{votes}/{total_experts}")
        votes_lines.append(f"{name},{votes},{total_experts}")
    (out_dir / "stack_manifest.csv").write_text("\n".join(manifest_lines) + "\n")
    (out_dir / "votes.csv").write_text("\n".join(votes_lines) + "\n")
    return out_dir / "stack_manifest.csv"


def render_pgm(raster: Raster, out_path: str | Path) -> None:
    """16-bit binary PGM: [0, 1] maps linearly onto [0, 65535] (floor),
    nodata renders as 0."""
    vals = raster.values
    gray = np.zeros(vals.size, dtype=np.uint16)
    valid = raster.valid_mask
    gray[valid] = np.floor(np.clip(vals[valid], 0.0, 1.0) * 65535.0).astype(np.uint16)
    header = f"P5\n{raster.meta.ncols} {raster.meta.nrows}\n65535\n".encode("ascii")
    with open(out_path, "wb") as fh:
        fh.write(header)
        fh.write(gray.astype(">u2").tobytes())


def _write_design_csv(design: ExperimentalDesign, path: Path) -> None:
    lines = ["index,r,t"]
    for i, p in enumerate(design.points):
        lines.append(f"{i},{p.r!r},{p.t!r}")
    path.write_text("\n".join(lines) + "\n")


def _read_design_csv(path: Path, seed: int = 0) -> ExperimentalDesign:
    lines = path.read_text().splitlines()
    points = []
    for line in lines[1:]:
        _, r, t = line.split(",")
        points.append(DecisionPoint(float(r), float(t)))
    return ExperimentalDesign(points=tuple(points), seed=seed, m=len(points))


def _write_weights_csv(weights, path: Path) -> None:
    n = len(weights[0]) if weights else 0
    lines = ["index," + ",".join(f"w_{j + 1}" for j in range(n))]
    for i, w in enumerate(weights):
        lines.append(f"{i}," + ",".join(repr(float(x)) for x in w.w))
    path.write_text("\n".join(lines) + "\n")


def _write_curve_csv(curve, path: Path) -> None:
    lines = ["k,variance_ratio"]
    for k, ratio in curve:
        lines.append(f"{k},{ratio!r}")
    path.write_text("\n".join(lines) + "\n")


def _write_merge_tree_csv(tree, path: Path) -> None:
    lines = ["step,cluster_a,cluster_b,height,new_size"]
    for step, (a, b, height, size) in enumerate(tree.merges):
        lines.append(f"{step},{a},{b},{height!r},{size}")
    path.write_text("\n".join(lines) + "\n")


def _write_distances(dm, out_dir: Path) -> None:
    tri = dm.d[np.tril_indices(dm.m, k=-1)]
    (out_dir / "distances.bin").write_bytes(tri.astype("<f8").tobytes())
    (out_dir / "distances_header.csv").write_text(
        "m,entries,dtype,order\n"
        f"{dm.m},{tri.size},float64-le,row-major-lower-triangle\n"
    )


def _cluster_outputs(store, design, tree, k, meta, valid_mask, out_dir, memory_budget):
    labels = cut(tree, k)
    summary = cluster_summaries(store, design, labels, meta, valid_mask, memory_budget)
    (out_dir / "segmentation.csv").write_text(export_segmentation(design, labels))
    for info in summary.clusters:
        (out_dir / f"cluster{info.label}_mean.asc").write_text(write_ascii_grid(info.mean_map))
        (out_dir / f"cluster{info.label}_std.asc").write_text(write_ascii_grid(info.std_map))
    centroid_lines = ["label,members,centroid_r,centroid_t"]
    for info in summary.clusters:
        centroid_lines.append(
            f"{info.label},{len(info.members)},{info.centroid_r!r},{info.centroid_t!r}"
        )
    (out_dir / "cluster_centroids.csv").write_text("\n".join(centroid_lines) + "\n")
    return summary


def run_pipeline(config: PipelineConfig) -> RunManifest:
    """Sample, aggregate, cluster; write every output under config.out.

    On a stage failure, whatever was produced moves to out/incomplete and
    the error propagates with the stage name attached.
    """
    out_dir = config.out
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    durations: dict[str, float] = {}
    stage = "load"

    def clock(name: str):
        nonlocal stage
        stage = name
        return time.perf_counter()

    try:
        t0 = clock("load")
        layers, weights = load_stack_manifest(config.stack_manifest)
        if config.criteria is not None and len(layers) != config.criteria:
            raise ConfigError(
                f"config says {config.criteria} criteria, manifest has {len(layers)}"
            )
        stack = build_stack(layers, weights)
        inputs = {str(config.stack_manifest): file_digest(config.stack_manifest)}
        base = config.stack_manifest.parent
        for line in config.stack_manifest.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line or line.startswith("name,"):
                continue
            parts = line.split(",") if "," in line else line.split()
            grid_path = (base / parts[1].strip()).resolve()
            inputs[str(grid_path)] = file_digest(grid_path)
        durations["load"] = time.perf_counter() - t0

        t0 = clock("sample")
        design = sample_design(config.m, config.seed)
        _write_design_csv(design, out_dir / "design.csv")
        durations["sample"] = time.perf_counter() - t0

        t0 = clock("aggregate")
        mask_meta = GridMeta(
            ncols=stack.meta.ncols,
            nrows=stack.meta.nrows,
            xllcorner=stack.meta.xllcorner,
            yllcorner=stack.meta.yllcorner,
            cellsize=stack.meta.cellsize,
            nodata_value=-9999.0,
        )
        mask_raster = Raster(mask_meta, stack.valid_mask.astype(np.float64))
        (out_dir / "mask.asc").write_text(write_ascii_grid(mask_raster))
        store, all_weights = batch_compute(
            stack, design, stack.n, out_dir / "maps.bin", workers=config.workers
        )
        _write_weights_csv(all_weights, out_dir / "weights.csv")
        durations["aggregate"] = time.perf_counter() - t0

        t0 = clock("distances")
        dm = pairwise_euclidean(
            store,
            expected_digest=mask_digest(stack.meta.ncols, stack.meta.nrows, stack.valid_mask),
            memory_budget=config.memory_budget,
            workers=config.workers,
        )
        if config.write_distances:
            _write_distances(dm, out_dir)
        durations["distances"] = time.perf_counter() - t0

        t0 = clock("cluster")
        tree = ward_linkage(dm)
        _write_merge_tree_csv(tree, out_dir / "merge_tree.csv")
        curve = variance_ratio_curve(store, tree, min(config.k_max, config.m), config.memory_budget)
        _write_curve_csv(curve, out_dir / "variance_curve.csv")
        (out_dir / "suggested_k.txt").write_text(f"{suggest_k(curve)}\n")
        durations["cluster"] = time.perf_counter() - t0

        if config.k is not None:
            t0 = clock("summaries")
            _cluster_outputs(
                store, design, tree, config.k, stack.meta, stack.valid_mask,
                out_dir, config.memory_budget,
            )
            durations["summaries"] = time.perf_counter() - t0
    except Exception as exc:
        incomplete = out_dir / "incomplete"
        incomplete.mkdir(parents=True, exist_ok=True)
        for item in sorted(out_dir.iterdir()):
            if item.name != "incomplete":
                target = incomplete / item.name
                if target.exists():
                    target.unlink() if target.is_file() else shutil.rmtree(target)
                shutil.move(str(item), str(target))
        raise type(exc)(f"stage {stage!r}: {exc}").with_traceback(exc.__traceback__) from exc

    manifest = RunManifest(
        config={
            **{k: (str(v) if isinstance(v, Path) else v) for k, v in asdict(config).items()},
        },
        inputs=inputs,
        version=__version__,
        started=started,
        finished=datetime.now(timezone.utc).isoformat(),
        durations=durations,
    )
    manifest.write(out_dir / "run_manifest.json")
    return manifest


def run_prep(prep_config: str | Path, out_dir: str | Path | None = None) -> Path:
    """Build criterion layers from a prep config (INI).

    The [inputs] section names the land-cover grid, the capacity matrix CSV
    and the votes CSV. Each [criterion:<name>] section either derives a
    layer from a service (optionally through a modifier) or passes a ready
    grid through unchanged:

        [criterion:crops]
        service = cultivated_crops
        modifier = categorical:soil_quality   # builtin table, or "categorical" + table=
        modifier_grid = soil.asc

        [criterion:connectivity]
        grid = connectivity.asc               # already normalized to [0, 1]

    Writes one .asc per criterion plus a stack manifest whose weights come
    from the votes CSV. Returns the manifest path.
    """
    import configparser

    from .prep import (
        CATEGORICAL_BUILTINS,
        ModifierRule,
        build_criterion,
        criterion_weight_from_votes,
        load_capacity_matrix,
        load_expert_votes,
    )

    prep_config = Path(prep_config)
    base = prep_config.parent
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case
    parser.read_string(prep_config.read_text())
    if "inputs" not in parser:
        raise ConfigError(f"{prep_config}: missing [inputs] section")
    inputs = parser["inputs"]
    out = Path(out_dir) if out_dir is not None else base / inputs.get("out", "criteria")
    out.mkdir(parents=True, exist_ok=True)

    luc = None
    matrix = None
    if "luc" in inputs:
        luc = parse_ascii_grid((base / inputs["luc"]).read_text())
    if "capacity_matrix" in inputs:
        matrix = load_capacity_matrix(
            Path(base / inputs["capacity_matrix"]),
            score_max=float(inputs.get("score_max", "5")),
        )
    votes = load_expert_votes(Path(base / inputs["votes"])) if "votes" in inputs else {}

    manifest_lines = ["name,path,weight"]
    for section in parser.sections():
        if not section.startswith("criterion:"):
            continue
        name = section.split(":", 1)[1]
        sec = parser[section]
        if "grid" in sec:
            raster = parse_ascii_grid((base / sec["grid"]).read_text())
        else:
            if luc is None or matrix is None:
                raise ConfigError(
                    f"criterion {name!r} derives from a service but [inputs] lacks luc/capacity_matrix"
                )
            service = sec.get("service", name)
            modifier_kind = sec.get("modifier", "none").strip()
            rule = None
            modifier_raster = None
            if modifier_kind not in ("", "none"):
                if "modifier_grid" not in sec:
                    raise ConfigError(f"criterion {name!r}: modifier set but no modifier_grid")
                modifier_raster = parse_ascii_grid((base / sec["modifier_grid"]).read_text())
                if modifier_kind.startswith("categorical"):
                    if ":" in modifier_kind:
                        builtin = modifier_kind.split(":", 1)[1]
                        if builtin not in CATEGORICAL_BUILTINS:
                            raise ConfigError(f"unknown builtin factor table {builtin!r}")
                        table = CATEGORICAL_BUILTINS[builtin]
                    elif "table" in sec:
                        table = {}
                        for item in sec["table"].split(","):
                            code, factor = item.split(":")
                            table[int(code)] = float(factor)
                    else:
                        raise ConfigError(f"criterion {name!r}: categorical modifier needs a table")
                    rule = ModifierRule(kind="categorical", table=table)
                elif modifier_kind == "continuous_98":
                    rule = ModifierRule(kind="continuous_98")
                elif modifier_kind == "piecewise_distance":
                    rule = ModifierRule(
                        kind="piecewise_distance",
                        d1=float(sec.get("d1", "300")),
                        d2=float(sec.get("d2", "1000")),
                        floor=float(sec.get("floor", "0.5")),
                    )
                else:
                    raise ConfigError(f"unknown modifier kind {modifier_kind!r}")
            raster = build_criterion(luc, matrix, service, rule, modifier_raster)
        (out / f"{name}.asc").write_text(write_ascii_grid(raster))

        if "weight" in sec:
            weight = float(sec["weight"])
        else:
            vote_key = sec.get("service", name)
            if vote_key not in votes and name in votes:
                vote_key = name
            if vote_key not in votes:
                raise ConfigError(f"criterion {name!r}: no weight and no votes entry")
            weight = criterion_weight_from_votes(votes[vote_key])
        manifest_lines.append(f"{name},{name}.asc,{weight!r}")

    manifest_path = out / "stack_manifest.csv"
    manifest_path.write_text("\n".join(manifest_lines) + "\n")
    return manifest_path


def analyze(run_dir: str | Path, k: int, out_dir: str | Path | None = None,
            memory_budget: int = DEFAULT_MEMORY_BUDGET_MIB * 1024 * 1024,
            k_max: int | None = None, workers: int = 1) -> None:
    """Re-cluster an existing map store with a new k, without recomputing maps."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)
    store = MapStore.open(run_dir / "maps.bin")
    design = _read_design_csv(run_dir / "design.csv")
    mask_raster = parse_ascii_grid((run_dir / "mask.asc").read_text())
    valid_mask = mask_raster.values == 1.0
    store.check_digest(mask_digest(mask_raster.meta.ncols, mask_raster.meta.nrows, valid_mask))
    if not (1 <= k <= store.m):
        raise ConfigError(f"k must be in [1, {store.m}], got {k}")
    dm = pairwise_euclidean(store, memory_budget=memory_budget, workers=workers)
    tree = ward_linkage(dm)
    _write_merge_tree_csv(tree, out / "merge_tree.csv")
    curve = variance_ratio_curve(store, tree, min(k_max or 15, store.m), memory_budget)
    _write_curve_csv(curve, out / "variance_curve.csv")
    (out / "suggested_k.txt").write_text(f"{suggest_k(curve)}\n")
    _cluster_outputs(store, design, tree, k, mask_raster.meta, valid_mask, out, memory_budget)
