import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plmsel.report import (
    TABLE1_COLUMNS,
    Report,
    dumps,
    format_float,
    read_report,
    table2_columns,
    write_csv,
    write_curves,
    write_report,
)

finite = st.floats(allow_nan=False, allow_infinity=False)
values = st.recursive(
    st.none() | st.booleans() | st.integers(-10**12, 10**12) | finite | st.text(max_size=8),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
    max_leaves=20,
)


class TestFormatting:
    @given(finite)
    def test_float_round_trip(self, x):
        assert float(format_float(x)) == x

    def test_non_finite_tokens(self):
        assert [format_float(v) for v in (math.nan, math.inf, -math.inf)] == ["NaN", "Infinity", "-Infinity"]
        doc = json.loads(dumps({"a": [math.nan, math.inf, -math.inf]}))
        assert math.isnan(doc["a"][0]) and doc["a"][1:] == [math.inf, -math.inf]

    def test_integer_valued_floats_stay_floats(self):
        doc = json.loads(dumps({"a": 0.0, "b": -0.0, "c": 3.0, "d": 3}))
        assert isinstance(doc["a"], float) and isinstance(doc["c"], float) and isinstance(doc["d"], int)
        assert math.copysign(1.0, doc["b"]) == -1.0

    def test_sorted_keys_and_numpy_values(self):
        text = dumps({"b": np.float64(0.1), "a": np.arange(2), "c": (np.bool_(True),)})
        assert text.index('"a"') < text.index('"b"') < text.index('"c"')
        assert json.loads(text) == {"a": [0, 1], "b": 0.1, "c": [True]}
        assert text.endswith("\n")

    def test_unserializable(self):
        with pytest.raises(TypeError):
            dumps({"a": object()})


class TestReport:
    @given(st.dictionaries(st.text(max_size=6), values, max_size=5), st.dictionaries(st.text(max_size=6), values, max_size=3))
    def test_round_trip(self, results, diagnostics):
        rep = Report("fit", results, diagnostics)
        back = Report.from_dict(json.loads(rep.dumps()))
        assert back == rep
        assert back.dumps() == rep.dumps()

    def test_file_round_trip(self, tmp_path):
        rep = Report("select", {"beta_p": np.array([1.5, 0.0]), "active_set": (0,)}, {"iterations": 7})
        path = tmp_path / "r.json"
        write_report(rep, path)
        back = read_report(path)
        assert back.schema_version == "1" and back.command == "select"
        assert back.results == {"active_set": [0], "beta_p": [1.5, 0.0]}
        write_report(back, tmp_path / "s.json")
        assert (tmp_path / "s.json").read_bytes() == path.read_bytes()

    def test_io_errors_carry_path(self, tmp_path):
        missing = tmp_path / "nope" / "r.json"
        with pytest.raises(OSError, match="nope"):
            write_report(Report("fit"), missing)
        with pytest.raises(OSError, match="nope"):
            read_report(missing)


class TestCsv:
    def test_curves_shape(self, tmp_path):
        grid = np.linspace(0, 1, 201)
        path = tmp_path / "c.csv"
        write_curves(path, grid, np.column_stack([np.sin(grid), grid]))
        lines = path.read_text().splitlines()
        assert len(lines) == 202
        assert lines[0] == "z,eta_1,eta_2"
        assert [float(v) for v in lines[-1].split(",")] == [1.0, np.sin(1.0), 1.0]

    def test_table_columns(self, tmp_path):
        assert TABLE1_COLUMNS == ("n", "penalty", "covariance", "C", "I", "MRME", "RMSE")
        assert table2_columns()[:3] == ("covariance", "n", "penalty")
        assert len(table2_columns()) == 12
        path = tmp_path / "t.csv"
        write_csv(path, TABLE1_COLUMNS, [[400, "SCAD", "EX", 4.9, 0.0, 30.5, 0.07]])
        assert path.read_text() == "n,penalty,covariance,C,I,MRME,RMSE\n400,SCAD,EX,4.9000000000000004,0.0,30.5,0.070000000000000007\n"
