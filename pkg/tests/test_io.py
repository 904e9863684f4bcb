import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from refractor_lab import io
from refractor_lab.refractor_solver import DiscreteRefractor
from refractor_lab.scene import Scene, discretize_target


def test_non_finite_become_null():
    text = io.to_json({"a": math.inf, "b": [1.0, math.nan], "c": np.float64(2.5)})
    assert io.json.loads(text) == {"a": None, "b": [1.0, None], "c": 2.5}
    assert text.endswith("\n")


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_json_floats_round_trip(vals):
    back = io.json.loads(io.to_json({"v": np.array(vals)}))["v"]
    assert back == vals


def test_csv_round_trip(tmp_path):
    rows = [(1, 0.1 + 0.2, 1e-300), (2, -1.0 / 3.0, 12345.678)]
    p = io.write_csv(tmp_path / "t.csv", ["i", "a", "b"], rows)
    head, got = io.read_csv(p)
    assert head == ["i", "a", "b"]
    assert [tuple(float(x) for x in r) for r in got] == [tuple(float(x) for x in r) for r in rows]


def test_scene_and_refractor_files_round_trip(tmp_path, scene3):
    d = discretize_target(scene3, 5)
    io.write_json(tmp_path / "s.json", d)
    assert io.load_scene(tmp_path / "s.json").to_dict() == Scene.from_dict(d.to_dict()).to_dict()
    u = DiscreteRefractor(0.5, d.target.points, np.linspace(12.0, 13.0, 5))
    io.write_json(tmp_path / "u.json", u)
    v = io.load_refractor(tmp_path / "u.json")
    np.testing.assert_array_equal(v.b, u.b)
    np.testing.assert_array_equal(v.foci, u.foci)


def test_output_is_byte_stable(tmp_path, scene2):
    a = io.to_json(scene2)
    b = io.to_json(Scene.from_json(a))
    assert a == b
    assert io.text_sha256(a) == io.text_sha256(b)
