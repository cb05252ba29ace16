import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from compute_oversight import serial


@pytest.mark.parametrize(
    "x, text",
    [(0.5, "5e-1"), (1e26, "1e+26"), (6.3e14, "6.3e+14"), (0.0, "0e0"), (-0.0, "-0e0"), (123.25, "1.2325e+2")],
)
def test_format_float_examples(x, text):
    assert serial.format_float(x) == text


def test_integers_written_verbatim_above_2_53():
    big = 2**53 + 1
    line = serial.dumps({"ops": big})
    assert line == '{"ops":9007199254740993}'
    assert serial.loads(line)["ops"] == big


def test_key_order_and_no_whitespace():
    assert serial.dumps({"b": 1, "a": [True, None, "x"]}) == '{"b":1,"a":[true,null,"x"]}'


def test_numpy_scalars_are_unwrapped():
    assert serial.dumps([np.float64(0.25), np.int64(3)]) == "[2.5e-1,3]"


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(ValueError):
        serial.dumps(bad)


def test_unserializable_type():
    with pytest.raises(TypeError):
        serial.dumps(object())


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    y = serial.loads(serial.dumps(x))
    assert y == x and math.copysign(1, y) == math.copysign(1, x)


json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.floats(allow_nan=False, allow_infinity=False) | st.text(),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=5), inner, max_size=4),
    max_leaves=20,
)


@given(json_values)
def test_dumps_is_a_fixed_point(v):
    line = serial.dumps(v)
    assert serial.dumps(serial.loads(line)) == line


def test_write_read_lines(tmp_path):
    objs = [{"a": 1}, [1.5, "é"], None]
    serial.write_lines(tmp_path / "x.jsonl", objs)
    assert list(serial.read_lines(tmp_path / "x.jsonl")) == objs
    assert (tmp_path / "x.jsonl").read_bytes().count(b"\n") == 3
