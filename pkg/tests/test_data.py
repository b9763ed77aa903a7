import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paygap.data import (CATEGORICAL, CONTINUOUS, Column, Dataset, DesignError, DummyExpansion,
                         Interaction, ModelSpec, Polynomial, Schema, SchemaError, baseline_spec,
                         build_design, full_spec, load_dataset, parse_schema, save_dataset,
                         standardized_difference)
from helpers import small_dataset

SCHEMA_TEXT = """\
g = group
y = outcome
w = weight
edu = covariate:categorical:A,B
age = covariate:continuous
bins.age = 30
"""


def _write(tmp_path, rows):
    (tmp_path / "s.txt").write_text(SCHEMA_TEXT, encoding="utf-8")
    body = "g,y,w,edu,age\n" + "\n".join(rows) + "\n"
    (tmp_path / "d.csv").write_text(body, encoding="utf-8")
    return tmp_path / "d.csv", tmp_path / "s.txt"


def _binary(p1: float, p0: float, m: int = 1000) -> Dataset:
    k1, k0 = round(p1 * m), round(p0 * m)
    x = np.r_[np.ones(k1), np.zeros(m - k1), np.ones(k0), np.zeros(m - k0)]
    g = np.r_[np.ones(m), np.zeros(m)].astype(int)
    return Dataset(g, np.zeros(2 * m), None, {"x": x})


# -- loading ------------------------------------------------------------------

def test_load_roundtrip(tmp_path):
    csv, schema = _write(tmp_path, ["1,2.5,1.0,A,25", "0,3.0,2.0,B,41", "1,2.7,1.5,B,33"])
    data = load_dataset(csv, schema)
    assert data.n_rows == 3
    assert data["edu"].tolist() == [0, 1, 1]
    assert data.weight.tolist() == [1.0, 2.0, 1.5]
    save_dataset(data, tmp_path / "out.csv", tmp_path / "out.txt")
    again = load_dataset(tmp_path / "out.csv", tmp_path / "out.txt")
    assert np.array_equal(again.outcome, data.outcome)
    assert np.array_equal(again["age"], data["age"])


def test_zero_weight_names_row(tmp_path):
    csv, schema = _write(tmp_path, ["1,2.5,1.0,A,25", "0,3.0,0,B,41"])
    with pytest.raises(SchemaError, match="row 2"):
        load_dataset(csv, schema)


def test_undeclared_level_names_column_and_level(tmp_path):
    csv, schema = _write(tmp_path, ["1,2.5,1.0,Z,25", "0,3.0,1.0,B,41"])
    with pytest.raises(SchemaError, match=r"'edu'.*'Z'"):
        load_dataset(csv, schema)


def test_missing_column_rejected(tmp_path):
    (tmp_path / "s.txt").write_text(SCHEMA_TEXT, encoding="utf-8")
    (tmp_path / "d.csv").write_text("g,y,w,edu\n1,2,1,A\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="age"):
        load_dataset(tmp_path / "d.csv", tmp_path / "s.txt")


def test_schema_rejects_block_overlap():
    with pytest.raises(SchemaError):
        parse_schema(SCHEMA_TEXT + "block.a = edu,age\nblock.b = age\n")


# -- design -------------------------------------------------------------------

def _toy():
    edu = np.array([0, 1, 2, 0, 1, 2])
    occ = np.array([0, 1, 2, 3, 0, 1])
    cols = (Column("edu", CATEGORICAL, ("e0", "e1", "e2")),
            Column("occ", CATEGORICAL, ("o0", "o1", "o2", "o3")),
            Column("age", CONTINUOUS))
    schema = Schema("g", "y", cols)
    return Dataset(np.array([0, 1, 0, 1, 0, 1]), np.arange(6.0), None,
                   {"edu": edu, "occ": occ, "age": np.array([20., 30, 40, 20, 30, 40])}, schema)


def test_dummy_expansion_k_minus_one():
    X = build_design(_toy(), ModelSpec("Baseline", (DummyExpansion("edu"),)))
    assert X.names == ("edu=e1", "edu=e2")


def test_polynomial_full_rank():
    X = build_design(_toy(), ModelSpec("Baseline", (Polynomial("age", 2),)))
    assert X.n_columns == 2 and np.linalg.matrix_rank(X.values) == 2


def test_interaction_products_by_hand():
    # rows (edu, occ): (0,0) (1,1) (2,2) (0,3) (1,0) (2,1); the six non-reference
    # products are e1*o1, e1*o2, e1*o3, e2*o1, e2*o2, e2*o3, of which only
    # e1*o1 (row 2), e2*o2 (row 3) and e2*o1 (row 6) are non-zero
    X = build_design(_toy(), ModelSpec("Full", (Interaction(DummyExpansion("edu"),
                                                            DummyExpansion("occ")),)))
    assert X.names == ("edu=e1*occ=o1", "edu=e2*occ=o1", "edu=e2*occ=o2")
    assert X.values[:, 0].tolist() == [0, 1, 0, 0, 0, 0]


def test_unknown_column_raises():
    with pytest.raises(DesignError):
        build_design(_toy(), ModelSpec("Baseline", (Polynomial("tenure", 2),)))


def test_baseline_subset_of_full():
    data = small_dataset(np.random.default_rng(1))
    base = build_design(data, baseline_spec(data.schema))
    full = build_design(data, full_spec(data.schema))
    assert set(base.names) <= set(full.names)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_design_row_permutation(seed):
    rng = np.random.default_rng(seed)
    data = small_dataset(rng, n=80)
    perm = rng.permutation(data.n_rows)
    spec = full_spec(data.schema)
    X = build_design(data, spec)
    Xp = build_design(data.subset(perm), spec)
    # polynomial standardisation is permutation invariant up to summation order
    assert X.names == Xp.names
    np.testing.assert_allclose(Xp.values, X.values[perm], rtol=1e-12, atol=1e-12)
    assert np.array_equal(build_design(data, spec).values, X.values)


# -- standardized difference --------------------------------------------------

def test_std_diff_fulltime_row():
    assert standardized_difference(_binary(0.406, 0.850), "x") == pytest.approx(103.4, abs=0.05)


def test_std_diff_second_row():
    assert standardized_difference(_binary(0.044, 0.297), "x") == pytest.approx(71.4, abs=0.05)


def test_std_diff_hand_value():
    # means 1 and 2 with population variance 0.5 in each group
    h = np.sqrt(0.5)
    data = Dataset(np.array([1, 1, 0, 0]), np.zeros(4), None,
                   {"x": np.array([1 - h, 1 + h, 2 - h, 2 + h])})
    assert standardized_difference(data, "x") == pytest.approx(100 / np.sqrt(0.5), rel=1e-12)


def test_std_diff_identical_groups_zero():
    x = np.array([1.0, 2.0, 1.0, 2.0])
    data = Dataset(np.array([1, 1, 0, 0]), np.zeros(4), None, {"x": x})
    assert standardized_difference(data, "x") == 0.0


def test_std_diff_degenerate_scale():
    data = Dataset(np.array([1, 1, 0, 0]), np.zeros(4), None, {"x": np.array([1.0, 1, 2, 2])})
    with pytest.raises(ValueError, match="degenerate scale"):
        standardized_difference(data, "x")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_std_diff_weight_scale_invariant(seed, c):
    data = small_dataset(np.random.default_rng(seed), n=60)
    a = standardized_difference(data, "x0")
    b = standardized_difference(data.with_weight(data.weight * c), "x0")
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)
