"""Table ingestion, dummy coding, and group indexing."""

import numpy as np
import pytest

from irtkit import data as dt


@pytest.fixture
def toy_table(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text(
        "person,item,y\n"
        "1,1,1\n"
        "1,2,0\n"
        "2,1,1\n"
        "2,2,1\n"
        "3,1,0\n"
    )
    return dt.load_table(str(path))


def test_integer_file_echo(toy_table):
    assert toy_table.n_rows == 5
    for name in ("person", "item", "y"):
        assert toy_table.column(name).kind == "integer"
    assert toy_table.column("y").values.tolist() == [1, 0, 1, 1, 0]


def test_real_and_factor_inference(tmp_path):
    path = tmp_path / "mix.csv"
    path.write_text("t,grp\n0.5,a\n1.25,b\n2.0,a\n")
    table = dt.load_table(str(path))
    assert table.column("t").kind == "real"
    assert table.column("grp").kind == "factor"
    assert table.column("grp").levels == ("a", "b")


def test_declared_types_override_inference(tmp_path):
    path = tmp_path / "declared.csv"
    path.write_text("y,cond\n1,1\n2,2\n1,3\n")
    table = dt.load_table(str(path), column_types={"cond": "factor"})
    assert table.column("cond").kind == "factor"
    assert table.column("cond").levels == ("1", "2", "3")


def test_empty_cell_names_row_and_column(tmp_path):
    path = tmp_path / "holes.csv"
    path.write_text("a,b\n1,2\n,4\n")
    with pytest.raises(ValueError) as err:
        dt.load_table(str(path))
    msg = str(err.value)
    assert "2" in msg and "a" in msg  # data row 2, column a


def test_duplicate_header_rejected(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("a,a\n1,2\n")
    with pytest.raises(ValueError, match="duplicate"):
        dt.load_table(str(path))


def test_unparseable_numeric_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y\n1\ntwo\n")
    with pytest.raises(ValueError):
        dt.load_table(str(path), column_types={"y": "real"})


def test_save_table_round_trip(tmp_path, toy_table):
    out = tmp_path / "echo.csv"
    dt.save_table(toy_table, str(out))
    again = dt.load_table(str(out))
    assert again.n_rows == toy_table.n_rows
    for name in toy_table.columns:
        assert again.column(name).kind == toy_table.column(name).kind
        assert np.array_equal(again.column(name).values,
                              toy_table.column(name).values)


# design matrices -----------------------------------------------------------

@pytest.fixture
def cov_table():
    return dt.ResponseTable.from_dict({
        "mode": ["want", "do", "want", "do"],
        "Gender": ["M", "M", "F", "F"],
        "Anger": [12, 25, 17, 21],
    })


def test_two_level_dummy_against_first_level(cov_table):
    dm = dt.build_design_matrix([("mode",)], cov_table, intercept=True)
    assert dm.col_names == ("modedo",)
    assert dm.values[:, 0].tolist() == [0.0, 1.0, 0.0, 1.0]


def test_no_intercept_factor_gets_full_indicators():
    items = [f"i{k}" for k in range(1, 25)]
    table = dt.ResponseTable.from_dict({"item": items})
    dm = dt.build_design_matrix([("item",)], table, intercept=False)
    assert len(dm.col_names) == 24
    assert np.array_equal(dm.values, np.eye(24))
    assert dm.values.sum(axis=1).tolist() == [1.0] * 24


def test_interaction_expansion_by_hand(cov_table):
    dm = dt.build_design_matrix(
        [("Anger",), ("Gender",), ("mode",), ("mode", "Gender")],
        cov_table, intercept=True)
    assert dm.col_names == ("Anger", "GenderF", "modedo", "modedo:GenderF")
    np.testing.assert_array_equal(dm.values[:, 0], [12, 25, 17, 21])
    np.testing.assert_array_equal(dm.values[:, 1], [0, 0, 1, 1])
    np.testing.assert_array_equal(dm.values[:, 2], [0, 1, 0, 1])
    np.testing.assert_array_equal(dm.values[:, 3], [0, 0, 0, 1])


def test_star_equals_sum_plus_interaction(cov_table):
    star_terms = [("mode",), ("Gender",), ("mode", "Gender")]
    combined = dt.build_design_matrix(star_terms, cov_table, intercept=True)
    pieces = [dt.build_design_matrix([t], cov_table, intercept=True)
              for t in star_terms]
    names = [n for p in pieces for n in p.col_names]
    values = np.column_stack([p.values for p in pieces])
    assert sorted(combined.col_names) == sorted(names)
    order = [names.index(n) for n in combined.col_names]
    np.testing.assert_array_equal(combined.values, values[:, order])


def test_dummy_column_counts():
    table = dt.ResponseTable.from_dict({"f": ["a", "b", "c", "a", "c"]})
    with_int = dt.build_design_matrix([("f",)], table, intercept=True)
    without = dt.build_design_matrix([("f",)], table, intercept=False)
    assert len(with_int.col_names) == 2
    assert len(without.col_names) == 3
    assert without.values.sum(axis=1).tolist() == [1.0] * 5


def test_reference_level_is_first_appearance():
    table = dt.ResponseTable.from_dict({"f": ["z", "a", "z", "m"]})
    dm = dt.build_design_matrix([("f",)], table, intercept=True)
    # "z" appears first, so it is the reference even though "a" sorts first
    assert dm.col_names == ("fa", "fm")


def test_unknown_column_and_single_level_errors(cov_table):
    with pytest.raises(KeyError):
        dt.build_design_matrix([("nope",)], cov_table, intercept=True)
    one = dt.ResponseTable.from_dict({"f": ["a", "a"]})
    with pytest.raises(ValueError, match="single level"):
        dt.build_design_matrix([("f",)], one, intercept=True)


# group indices -------------------------------------------------------------

def test_group_index_direct_encoding():
    table = dt.ResponseTable.from_dict({"g": ["a", "b", "a", "c"]})
    gi = dt.build_group_index(table, "g")
    assert gi.n_levels == 3
    assert gi.level_of_obs.tolist() == [1, 2, 1, 3]
    assert gi.levels == ("a", "b", "c")


def test_group_index_requires_factor():
    table = dt.ResponseTable.from_dict({"x": [1.5, 2.5]},
                                       column_types={"x": "real"})
    with pytest.raises(ValueError):
        dt.build_group_index(table, "x")


def test_group_index_permutation_equivariance():
    rng = np.random.default_rng(5)
    cells = list(rng.choice(["a", "b", "c", "d"], size=40))
    perm = rng.permutation(40)
    base = dt.build_group_index(
        dt.ResponseTable.from_dict({"g": cells}), "g")
    permuted = dt.build_group_index(
        dt.ResponseTable.from_dict({"g": [cells[i] for i in perm]}), "g",
        levels=base.levels)
    assert permuted.n_levels == base.n_levels
    np.testing.assert_array_equal(permuted.level_of_obs,
                                  base.level_of_obs[perm])


def test_from_dict_row_length_mismatch():
    with pytest.raises(ValueError, match="rows"):
        dt.ResponseTable.from_dict({"a": [1, 2], "b": [1, 2, 3]})
