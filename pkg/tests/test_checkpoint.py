import struct

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from quietgait import checkpoint

shapes = hnp.array_shapes(min_dims=0, max_dims=3, max_side=4)
arrays = hnp.arrays(np.float32, shapes, elements=st.floats(-1e6, 1e6, width=32))


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture], max_examples=40)
@given(st.dictionaries(st.text("abcdef._", min_size=1, max_size=12), arrays, max_size=4),
       st.dictionaries(st.text("xyz", min_size=1, max_size=4), st.integers(-5, 5), max_size=3))
def test_round_trip(tmp_path, named, meta):
    path = checkpoint.save_arrays(tmp_path / "a.qgc", named, meta)
    back, meta2 = checkpoint.load_arrays(path)
    assert meta2 == meta
    assert set(back) == set(named)
    for k, v in named.items():
        assert back[k].shape == v.shape
        np.testing.assert_array_equal(back[k], v)


def test_layout_is_little_endian_row_major(tmp_path):
    path = checkpoint.save_arrays(tmp_path / "b.qgc", {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}, {})
    data = path.read_bytes()
    assert data[:8] == checkpoint.MAGIC
    assert struct.unpack_from("<II", data, 8) == (checkpoint.VERSION, 2)
    tail = np.frombuffer(data[-24:], dtype="<f4")
    np.testing.assert_array_equal(tail, np.arange(6))


def test_corruption_is_reported(tmp_path):
    path = checkpoint.save_arrays(tmp_path / "c.qgc", {"w": np.ones((3, 3), np.float32)}, {"k": 1})
    good = path.read_bytes()
    for bad in (b"NOTACKPT" + good[8:], good[:-5], good + b"\0", good[:8] + struct.pack("<I", 99) + good[12:]):
        path.write_bytes(bad)
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load_arrays(path)


def test_module_round_trip_and_shape_mismatch(tmp_path):
    a = torch.nn.Linear(3, 2)
    path = checkpoint.save_arrays(tmp_path / "m.qgc", checkpoint.module_arrays("net", a))
    arrs, _ = checkpoint.load_arrays(path)
    b = torch.nn.Linear(3, 2)
    checkpoint.load_module("net", b, arrs)
    assert torch.equal(a.weight, b.weight)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_module("net", torch.nn.Linear(4, 2), arrs)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_module("other", b, arrs)
