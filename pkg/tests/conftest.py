import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from owa_explorer.grid import GridMeta, Raster, build_stack


@pytest.fixture
def meta_2x1():
    return GridMeta(ncols=2, nrows=1, xllcorner=0.0, yllcorner=0.0, cellsize=5.0)


@pytest.fixture
def small_stack():
    """4 random criterion layers on a 12x9 grid, one nodata hole."""
    rng = np.random.default_rng(1234)
    meta = GridMeta(ncols=12, nrows=9, xllcorner=0.0, yllcorner=0.0, cellsize=10.0)
    layers = []
    for j in range(4):
        values = rng.random(meta.size)
        if j == 2:
            values[17] = meta.nodata_value
            values[40] = meta.nodata_value
        layers.append((f"c{j}", Raster(meta, values)))
    return build_stack(layers, [0.4, 0.3, 0.2, 0.1])
