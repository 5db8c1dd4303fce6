import numpy as np
import pytest

from owa_explorer.errors import (
    AlignmentError,
    DimensionMismatch,
    MalformedHeader,
    NonNumericCell,
    NonPositiveWeight,
    ValueRangeError,
)
from owa_explorer.grid import (
    CriterionWeights,
    GridMeta,
    Raster,
    build_stack,
    parse_ascii_grid,
    write_ascii_grid,
)

HEADER_2X1 = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 5\nNODATA_value -9999\n"


def test_parse_basic():
    r = parse_ascii_grid(HEADER_2X1 + "0.2 0.8")
    assert r.meta.ncols == 2 and r.meta.nrows == 1
    assert r.values.tolist() == [0.2, 0.8]
    assert r.valid_mask.tolist() == [True, True]


def test_parse_wrong_cell_count():
    with pytest.raises(DimensionMismatch):
        parse_ascii_grid(HEADER_2X1 + "0.2")


def test_parse_nodata_sentinel():
    r = parse_ascii_grid(HEADER_2X1 + "0.2 -9999")
    assert r.valid_mask.tolist() == [True, False]


def test_parse_header_case_insensitive():
    text = "NCOLS 2\nNrows 1\nXLLCORNER 0\nyllcorner 0\nCellSize 5\nnodata_VALUE -1\n0.2 0.8"
    r = parse_ascii_grid(text)
    assert r.meta.nodata_value == -1.0


def test_parse_nodata_defaults():
    text = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 5\n0.1 0.2"
    assert parse_ascii_grid(text).meta.nodata_value == -9999.0


def test_parse_missing_key():
    with pytest.raises(MalformedHeader):
        parse_ascii_grid("ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\n0.1 0.2")


def test_parse_duplicate_key():
    with pytest.raises(MalformedHeader):
        parse_ascii_grid("ncols 2\nncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 5\n0.1 0.2")


def test_parse_non_numeric_cell():
    with pytest.raises(NonNumericCell):
        parse_ascii_grid(HEADER_2X1 + "0.2 abc")


def test_parse_rejects_nan_cell():
    with pytest.raises(NonNumericCell):
        parse_ascii_grid(HEADER_2X1 + "0.2 nan")


def test_parse_accepts_bytes():
    r = parse_ascii_grid((HEADER_2X1 + "0.25 0.75").encode("ascii"))
    assert r.values.tolist() == [0.25, 0.75]


def test_roundtrip_bit_exact(meta_2x1):
    r = Raster(meta_2x1, np.array([0.2, 0.8]))
    again = parse_ascii_grid(write_ascii_grid(r))
    assert again.values.tolist() == r.values.tolist()
    assert again.meta == r.meta


def test_roundtrip_awkward_values():
    rng = np.random.default_rng(7)
    meta = GridMeta(ncols=5, nrows=4, xllcorner=-3.1, yllcorner=47.123456789, cellsize=0.1)
    values = rng.random(20)
    values[3] = 1.0 / 3.0
    values[7] = 1e-15
    values[11] = meta.nodata_value
    r = Raster(meta, values)
    again = parse_ascii_grid(write_ascii_grid(r))
    assert np.array_equal(again.values, r.values)
    assert again.meta.yllcorner == meta.yllcorner


def test_seventeen_digits_reparse():
    assert float(f"{0.1:.17g}") == 0.1


def test_nodata_serialized_as_declared_literal(meta_2x1):
    text = write_ascii_grid(Raster(meta_2x1, np.array([0.5, -9999.0])))
    assert "-9999" in text.split("\n")[6]


def test_header_order_fixed(meta_2x1):
    lines = write_ascii_grid(Raster(meta_2x1, np.array([0.0, 1.0]))).splitlines()
    keys = [line.split()[0] for line in lines[:6]]
    assert keys == ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value"]


def test_meta_alignment_tolerance():
    a = GridMeta(2, 2, 100.0, 200.0, 5.0)
    b = GridMeta(2, 2, 100.0 * (1 + 1e-12), 200.0, 5.0, nodata_value=-1.0)
    c = GridMeta(2, 2, 100.1, 200.0, 5.0)
    assert a.aligned_with(b)
    assert not a.aligned_with(c)
    assert not a.aligned_with(GridMeta(3, 2, 100.0, 200.0, 5.0))


def test_meta_validation():
    with pytest.raises(DimensionMismatch):
        GridMeta(0, 2, 0.0, 0.0, 5.0)
    with pytest.raises(MalformedHeader):
        GridMeta(2, 2, 0.0, 0.0, -5.0)


def test_raster_rejects_wrong_length(meta_2x1):
    with pytest.raises(DimensionMismatch):
        Raster(meta_2x1, np.array([0.1, 0.2, 0.3]))


def test_criterion_weights_normalize():
    w = CriterionWeights(np.array([1.0, 1.0]))
    assert w.v.tolist() == [0.5, 0.5]
    with pytest.raises(NonPositiveWeight):
        CriterionWeights(np.array([1.0, 0.0]))


def test_build_stack_normalizes(meta_2x1):
    a = Raster(meta_2x1, np.array([0.1, 0.9]))
    b = Raster(meta_2x1, np.array([0.2, 0.8]))
    stack = build_stack([("a", a), ("b", b)], [1.0, 1.0])
    assert stack.criterion_weights.v.tolist() == [0.5, 0.5]
    assert abs(stack.criterion_weights.v.sum() - 1.0) <= 1e-9


def test_build_stack_alignment_error(meta_2x1):
    other = GridMeta(ncols=2, nrows=1, xllcorner=0.0, yllcorner=0.0, cellsize=6.0)
    a = Raster(meta_2x1, np.array([0.1, 0.9]))
    b = Raster(other, np.array([0.2, 0.8]))
    with pytest.raises(AlignmentError):
        build_stack([("a", a), ("b", b)], [1.0, 1.0])


def test_build_stack_mask_intersection(meta_2x1):
    a = Raster(meta_2x1, np.array([0.1, -9999.0]))
    b = Raster(meta_2x1, np.array([0.2, 0.8]))
    stack = build_stack([("a", a), ("b", b)], [1.0, 1.0])
    assert stack.valid_mask.tolist() == [True, False]


def test_build_stack_value_range(meta_2x1):
    bad = Raster(meta_2x1, np.array([0.1, 1.5]))
    ok = Raster(meta_2x1, np.array([0.2, 0.8]))
    with pytest.raises(ValueRangeError):
        build_stack([("bad", bad), ("ok", ok)], [1.0, 1.0])


def test_build_stack_clamps_float_dust(meta_2x1):
    dusty = Raster(meta_2x1, np.array([1.0 + 1e-10, -1e-10]))
    ok = Raster(meta_2x1, np.array([0.2, 0.8]))
    stack = build_stack([("dusty", dusty), ("ok", ok)], [1.0, 1.0])
    assert stack.layers[0].values.tolist() == [1.0, 0.0]


def test_build_stack_needs_two_layers(meta_2x1):
    a = Raster(meta_2x1, np.array([0.1, 0.9]))
    with pytest.raises(AlignmentError):
        build_stack([("a", a)], [1.0])


def test_valid_count_bounded_by_layers():
    rng = np.random.default_rng(3)
    meta = GridMeta(ncols=8, nrows=8, xllcorner=0.0, yllcorner=0.0, cellsize=1.0)
    layers = []
    counts = []
    for j in range(3):
        values = rng.random(meta.size)
        holes = rng.choice(meta.size, size=5, replace=False)
        values[holes] = meta.nodata_value
        layers.append((f"c{j}", Raster(meta, values)))
        counts.append(int((values != meta.nodata_value).sum()))
    stack = build_stack(layers, [1.0, 2.0, 3.0])
    assert int(stack.valid_mask.sum()) <= min(counts)
    # conjunction semantics
    expected = np.ones(meta.size, dtype=bool)
    for _, layer in layers:
        expected &= layer.valid_mask
    assert np.array_equal(stack.valid_mask, expected)
