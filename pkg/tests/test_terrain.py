import numpy as np
import pytest
from hypothesis import given, strategies as st

from quietgait import terrain


def test_flat_is_zero_and_level():
    t = terrain.flat()
    assert t.height(3.21) == 0.0
    assert t.slope(3.21) == 0.0


@given(st.floats(-4.9, 39.9))
def test_interpolation_matches_numpy(x):
    t = terrain.rough(np.random.default_rng(0), 0.05)
    xs = t.x0 + t.dx * np.arange(len(t.heights))
    assert t.height(x) == pytest.approx(np.interp(x, xs, t.heights), abs=1e-12)


def test_edges_are_held():
    t = terrain.stairs(0.05)
    assert t.height(1e3) == pytest.approx(t.heights[-1])
    assert t.height(-1e3) == pytest.approx(t.heights[0])


def test_route_materials():
    t = terrain.route([("wood", 2.0), ("tiles", 3.0), ("carpet", 1.0)])
    assert t.material_at(-1.0) == "wood"
    assert t.material_at(2.5) == "tiles"
    assert t.material_at(5.5) == "carpet"
    assert t.material_at(100.0) == "carpet"
    with pytest.raises(ValueError):
        terrain.route([("wood", 0.0)])


def test_validation():
    with pytest.raises(ValueError):
        terrain.Terrain("lava", 0.0, 0.1, np.zeros(3))
    with pytest.raises(ValueError):
        terrain.Terrain("flat", 0.0, 0.1, np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        terrain.Terrain("flat", 0.0, 0.1, np.zeros(3), [(0.0, "glass")])


@given(st.integers(0, 4), st.integers(0, 100))
def test_curriculum_levels_are_tagged(level, seed):
    t = terrain.for_level(level, np.random.default_rng(seed))
    assert t.difficulty_level == level
    # no cliffs: neighbouring samples differ by at most one riser
    assert np.max(np.abs(np.diff(t.heights))) < 0.05
    assert t.height(0.0) == pytest.approx(0.0, abs=1e-9)
