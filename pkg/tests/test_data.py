import json

import numpy as np
import pytest

from survensemble.data import (
    Covariate,
    SurvDataset,
    SurvivalDataError,
    encode,
    read_covariate_csv,
    read_csv,
    read_schema,
    write_csv,
)


def test_records_round_trip():
    d = SurvDataset.from_records([(1.0, 1, 0.5), (2.0, 0, 1.5)])
    assert d.n == 2 and d.p == 1
    assert d.names == ["x1"]
    recs = d.records
    assert recs[1].time == 2.0 and recs[1].event == 0
    assert list(recs[0].covariates) == [0.5]


@pytest.mark.parametrize(
    "time, event",
    [([0.0], [1]), ([-1.0], [0]), ([np.nan], [1]), ([1.0], [2])],
)
def test_invalid_records_rejected(time, event):
    with pytest.raises(SurvivalDataError):
        SurvDataset(np.array(time), np.array(event), np.zeros((1, 0)))


def test_empty_dataset_rejected():
    with pytest.raises(SurvivalDataError):
        SurvDataset(np.zeros(0), np.zeros(0, int), np.zeros((0, 0)))


def test_arrays_are_read_only():
    d = SurvDataset.from_records([(1.0, 1), (2.0, 0)])
    with pytest.raises(ValueError):
        d.time[0] = 5.0


def test_unknown_covariate_kind():
    with pytest.raises(SurvivalDataError):
        Covariate("x", "ordinal")


def test_encode_reference_and_onehot():
    schema = (Covariate("g", "categorical", ("a", "b", "c")), Covariate("z"))
    X = np.array([[0, 1.0], [2, 2.0], [1, 3.0]])
    M, names, blocks = encode(X, schema)
    assert names == ["g=b", "g=c", "z"]
    np.testing.assert_array_equal(M, [[0, 0, 1], [0, 1, 2], [1, 0, 3]])
    assert blocks == {"g": [0, 1], "z": [2]}
    M1, names1, _ = encode(X, schema, scheme="onehot")
    assert names1 == ["g=a", "g=b", "g=c", "z"]
    np.testing.assert_array_equal(M1.sum(axis=1) - X[:, 1], 1)


def test_csv_round_trip_with_inferred_categorical(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,event,stage,size\n3.5,1,II,1.2\n2,0,I,0.4\n7,1,II,3\n")
    d = read_csv(p)
    assert [c.kind for c in d.schema] == ["categorical", "numeric"]
    assert d.schema[0].levels == ("I", "II")
    out = tmp_path / "o.csv"
    write_csv(d, out)
    d2 = read_csv(out)
    np.testing.assert_array_equal(d2.time, d.time)
    np.testing.assert_array_equal(d2.X, d.X)
    assert d2.schema == d.schema


def test_missing_event_column_named(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,x\n1,2\n")
    with pytest.raises(SurvivalDataError, match="'event'"):
        read_csv(p)


def test_malformed_row_reports_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,event,x\n1,1,2\n2,1\n")
    with pytest.raises(SurvivalDataError, match="line 3"):
        read_csv(p)
    p.write_text("time,event,x\n1,1,2\nabc,1,3\n")
    with pytest.raises(SurvivalDataError, match="line 3"):
        read_csv(p)


def test_schema_file(tmp_path):
    s = tmp_path / "s.json"
    s.write_text(json.dumps({"covariates": [{"name": "x", "kind": "categorical", "levels": ["0", "1", "2"]}]}))
    p = tmp_path / "d.csv"
    p.write_text("time,event,x\n1,1,2\n2,0,0\n")
    d = read_csv(p, s)
    assert d.schema == read_schema(s)
    np.testing.assert_array_equal(d.X[:, 0], [2, 0])
    s.write_text(json.dumps({"covariates": [{"name": "x", "kind": "weird"}]}))
    with pytest.raises(SurvivalDataError):
        read_schema(s)


def test_covariate_csv_uses_schema(tmp_path):
    schema = (Covariate("a"), Covariate("g", "categorical", ("u", "v")))
    p = tmp_path / "x.csv"
    p.write_text("g,a,extra\nv,1.5,9\nu,2,9\n")
    np.testing.assert_array_equal(read_covariate_csv(p, schema), [[1.5, 1], [2, 0]])
    p.write_text("g\nv\n")
    with pytest.raises(SurvivalDataError, match="'a'"):
        read_covariate_csv(p, schema)
