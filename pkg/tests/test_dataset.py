import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairauc.dataset import (FIG1_SCORES, GAUSSIAN2D_REFERENCE, STRATA, ColumnSchema, Dataset,
                             Gaussian2dSpec, GaussianCell, ScoreSynthSpec, SplitRatios, Standardizer,
                             group_stats, load_csv, read_canonical_csv, split, split_indices,
                             synth_gaussian2d, synth_scores, write_csv)
from fairauc.errors import DegenerateDatasetError, ParseError, SchemaError, SplitError
from fairauc.metrics import auc_naive

CSV = """age,job,sex,income,id
39,clerk,Male,>50K,1
50,exec,Female,<=50K,2
38,clerk,Male,<=50K,3
53,?,Male,>50K,4
28,prof,Female,>50K,5
37,exec,Female,<=50K,6
"""

SCHEMA = dict(label_column="income", label_positive=">50K", group_column="sex", group_a="Female",
              categorical_columns=["job"], numeric_columns=["age"], drop_columns=["id"])


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_csv_one_hot_first_appearance(tmp_path):
    ds = load_csv(write(tmp_path, CSV), ColumnSchema(**SCHEMA))
    # the row with '?' is dropped
    assert ds.n == 5
    assert ds.encoding["dropped_rows"] == 1
    assert ds.feature_names == ("age", "job=clerk", "job=exec", "job=prof")
    assert ds.encoding["categorical"]["job"] == ["clerk", "exec", "prof"]
    np.testing.assert_array_equal(ds.features[:, 1:].sum(axis=1), np.ones(5))
    np.testing.assert_array_equal(ds.labels, [1, -1, -1, 1, -1])
    np.testing.assert_array_equal(ds.group_names(), ["b", "a", "b", "a", "a"])
    assert ds.numeric_columns == (0,)
    assert ds.encoding["group"]["b"] == "Male"


def test_load_csv_quoted_fields(tmp_path):
    text = 'x,"cat, with comma",y,g\n1.5,"a, b",1,a\n2.5,c,0,b\n'
    ds = load_csv(write(tmp_path, text), ColumnSchema(
        label_column="y", label_positive="1", group_column="g", group_a="a",
        numeric_columns=["x"], categorical_columns=["cat, with comma"]))
    assert ds.feature_names == ("x", "cat, with comma=a, b", "cat, with comma=c")


def test_load_csv_missing_column(tmp_path):
    schema = ColumnSchema(**{**SCHEMA, "numeric_columns": ["age", "hours"]})
    with pytest.raises(SchemaError, match="hours"):
        load_csv(write(tmp_path, CSV), schema)


def test_load_csv_unlisted_column(tmp_path):
    schema = ColumnSchema(**{**SCHEMA, "drop_columns": []})
    with pytest.raises(SchemaError, match="id"):
        load_csv(write(tmp_path, CSV), schema)


def test_load_csv_bad_number_reports_row(tmp_path):
    text = CSV.replace("28,prof", "2x8,prof")
    with pytest.raises(ParseError) as info:
        load_csv(write(tmp_path, text), ColumnSchema(**SCHEMA))
    assert info.value.row == 4


def test_load_csv_third_group_value(tmp_path):
    text = CSV + "40,clerk,Other,>50K,7\n"
    with pytest.raises(ValueError, match="Other"):
        load_csv(write(tmp_path, text), ColumnSchema(**SCHEMA))


def test_load_csv_label_outside_declared_mapping(tmp_path):
    schema = ColumnSchema(**{**SCHEMA, "label_negative": "<=50K"})
    text = CSV + "40,clerk,Male,unknown,7\n"
    with pytest.raises(ValueError, match="unknown"):
        load_csv(write(tmp_path, text), schema)


def test_schema_rejects_overlapping_lists():
    with pytest.raises(SchemaError):
        ColumnSchema(**{**SCHEMA, "numeric_columns": ["age", "job"]})
    with pytest.raises(SchemaError):
        ColumnSchema(**{**SCHEMA, "group_column": "income"})


def test_canonical_csv_roundtrip(tmp_path, gaussian_synth):
    small = gaussian_synth.subset(np.arange(0, 4000, 97))
    path = tmp_path / "s.csv"
    write_csv(small, path)
    back = read_canonical_csv(path)
    np.testing.assert_array_equal(back.features, small.features)
    np.testing.assert_array_equal(back.labels, small.labels)
    np.testing.assert_array_equal(back.groups, small.groups)


@given(st.integers(1, 6), st.integers(1, 30), st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_one_hot_width_and_single_hot(k, n, seed):
    rng = np.random.default_rng(seed)
    cats = [f"c{rng.integers(k)}" for _ in range(n)]
    lines = ["cat,y,g"] + [f"{c},{i % 2},{'a' if i % 3 else 'b'}" for i, c in enumerate(cats)]
    import tempfile, pathlib
    with tempfile.TemporaryDirectory() as d:
        p = pathlib.Path(d) / "x.csv"
        p.write_text("\n".join(lines) + "\n")
        ds = load_csv(p, ColumnSchema(label_column="y", label_positive="1", group_column="g",
                                      group_a="a", categorical_columns=["cat"]))
    assert ds.d == len(set(cats))
    np.testing.assert_array_equal(ds.features.sum(axis=1), np.ones(n))


# --------------------------------------------------------------------------
# dataset invariants
# --------------------------------------------------------------------------


@given(st.lists(st.tuples(st.sampled_from([1, -1]), st.sampled_from(["a", "b"])), min_size=1, max_size=80))
@settings(max_examples=50, deadline=None)
def test_strata_partition(rows):
    y = [r[0] for r in rows]
    g = [r[1] for r in rows]
    ds = Dataset(np.zeros((len(rows), 1)), y, g)
    union = np.concatenate([ds.strata[k] for k in STRATA])
    assert sorted(union.tolist()) == list(range(len(rows)))
    for (z, lab), idx in ds.strata.items():
        assert all(ds.labels[i] == lab and ds.group_names()[i] == z for i in idx)


def test_dataset_is_immutable(gaussian_synth):
    with pytest.raises(ValueError):
        gaussian_synth.features[0, 0] = 1.0
    with pytest.raises(Exception):
        gaussian_synth.labels = None


def test_dataset_rejects_nonfinite():
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan]]), [1], ["a"])


# --------------------------------------------------------------------------
# split
# --------------------------------------------------------------------------


def test_split_balanced_exact(gaussian_synth):
    tr, va, te = split(gaussian_synth, SplitRatios(0.6, 0.2, 0.2), seed=3)
    for key in STRATA:
        assert (len(tr.strata[key]), len(va.strata[key]), len(te.strata[key])) == (600, 200, 200)


def test_split_deterministic(gaussian_synth):
    a = split_indices(gaussian_synth, SplitRatios(), 11)
    b = split_indices(gaussian_synth, SplitRatios(), 11)
    c = split_indices(gaussian_synth, SplitRatios(), 12)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a[0], c[0])


def test_split_partitions_each_cell(gaussian_synth):
    parts = split_indices(gaussian_synth, SplitRatios(), 5)
    for key in STRATA:
        cell = set(gaussian_synth.strata[key].tolist())
        pieces = [set(p.tolist()) & cell for p in parts]
        assert set().union(*pieces) == cell
        assert sum(len(p) for p in pieces) == len(cell)


def test_split_remainder_goes_to_train(rng):
    ds = Dataset(rng.standard_normal((4 * 7, 1)), [1, -1] * 14, [0] * 14 + [1] * 14)
    tr, va, te = split(ds, SplitRatios(), 0)
    for key in STRATA:
        assert (len(tr.strata[key]), len(va.strata[key]), len(te.strata[key])) == (5, 1, 1)


def test_split_too_small_stratum(rng):
    y = [1, -1] * 10
    g = [0] * 18 + [1, 1]
    with pytest.raises(SplitError, match="group=b"):
        split(Dataset(np.zeros((20, 1)), y, g), SplitRatios(), 0)


def test_split_ratios_validated():
    with pytest.raises(ValueError):
        SplitRatios(0.5, 0.2, 0.2)
    with pytest.raises(ValueError):
        SplitRatios(1.0, 0.0, 0.0)


def test_standardizer_uses_train_stats(gaussian_synth):
    tr, va, _ = split(gaussian_synth, SplitRatios(), 0)
    st_ = Standardizer.fit(tr)
    z = st_.transform(tr).features
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-12)
    np.testing.assert_allclose(st_.transform(va).features, (va.features - st_.mean) / st_.scale)
    assert Standardizer.from_dict(st_.to_dict()).to_dict() == st_.to_dict()


# --------------------------------------------------------------------------
# synthesis
# --------------------------------------------------------------------------


def test_reference_gaussian_shape(gaussian_synth):
    assert gaussian_synth.n == 4000 and gaussian_synth.d == 2
    assert all(c == 1000 for c in gaussian_synth.counts().values())


def test_gaussian_deterministic():
    a = synth_gaussian2d(GAUSSIAN2D_REFERENCE, 9).features
    b = synth_gaussian2d(GAUSSIAN2D_REFERENCE, 9).features
    assert a.tobytes() == b.tobytes()


def test_gaussian_degenerate_variance():
    spec = Gaussian2dSpec({k: GaussianCell(c.mean, 1e-12, 50) for k, c in GAUSSIAN2D_REFERENCE.cells.items()})
    ds = synth_gaussian2d(spec, 0)
    for (z, lab), idx in ds.strata.items():
        mean = np.array(spec.cells[(lab, z)].mean)
        assert np.abs(ds.features[idx] - mean).max() < 1e-5


def test_gaussian_law_of_large_numbers():
    spec = Gaussian2dSpec({k: GaussianCell(c.mean, c.variance, 100_000) for k, c in GAUSSIAN2D_REFERENCE.cells.items()})
    ds = synth_gaussian2d(spec, 4)
    for (z, lab), idx in ds.strata.items():
        np.testing.assert_allclose(ds.features[idx].mean(axis=0), spec.cells[(lab, z)].mean, atol=0.02)


def test_gaussian_spec_validation():
    with pytest.raises(ValueError):
        Gaussian2dSpec({k: GaussianCell(c.mean, 0.0, 10) for k, c in GAUSSIAN2D_REFERENCE.cells.items()})
    with pytest.raises(ValueError):
        Gaussian2dSpec({k: GaussianCell(c.mean, 1.0, 0) for k, c in GAUSSIAN2D_REFERENCE.cells.items()})


def test_illustrative_scores_shape():
    scores = synth_scores(FIG1_SCORES, 0)
    assert set(scores) == {(1, "a"), (-1, "a"), (1, "b"), (-1, "b")}
    for s in scores.values():
        assert len(s) == 1000 and np.all((s > 0) & (s < 1))


def test_scores_degenerate_is_half():
    spec = ScoreSynthSpec({k: GaussianCell(0.0, 1e-300, 5) for k in FIG1_SCORES.cells})
    for s in synth_scores(spec, 0).values():
        np.testing.assert_array_equal(s, 0.5)


def test_fig1_inter_fair_intra_unfair():
    s = synth_scores(FIG1_SCORES, 0)
    aa = auc_naive(s[(1, "a")], s[(-1, "a")])
    bb = auc_naive(s[(1, "b")], s[(-1, "b")])
    ab = auc_naive(s[(1, "a")], s[(-1, "b")])
    ba = auc_naive(s[(1, "b")], s[(-1, "a")])
    assert abs(ab - ba) < 0.03
    assert abs(aa - bb) > 0.05


# --------------------------------------------------------------------------
# group statistics
# --------------------------------------------------------------------------


def test_group_stats_balanced(gaussian_synth):
    gs = group_stats(gaussian_synth)
    np.testing.assert_array_equal(gs.priors, [0.25] * 4)
    assert gs.group_ratio == 1.0 and gs.class_ratio == 1.0


def test_group_stats_small_example():
    y = [1, -1, 1, -1, -1, -1]
    g = ["a", "a", "b", "b", "b", "b"]
    gs = group_stats(Dataset(np.zeros((6, 1)), y, g))
    assert gs.prior_fractions == (Fraction(1, 8), Fraction(3, 8), Fraction(1, 8), Fraction(3, 8))
    np.testing.assert_array_equal(gs.priors, [0.125, 0.375, 0.125, 0.375])
    assert gs.class_ratio == 2.0 and gs.group_ratio == 0.5


@given(st.lists(st.integers(1, 10**6), min_size=4, max_size=4))
def test_priors_sum_to_one_exactly(counts):
    from fairauc.dataset import pair_prior_fractions
    c = dict(zip(STRATA, counts))
    fr = pair_prior_fractions(c)
    assert sum(fr) == 1
    assert math.isclose(sum(float(f) for f in fr), 1.0, abs_tol=4e-16)


def test_group_stats_degenerate():
    with pytest.raises(DegenerateDatasetError):
        group_stats(Dataset(np.zeros((3, 1)), [1, 1, 1], ["a", "b", "a"]))


def test_drop_star_discards_unlisted(tmp_path):
    schema = ColumnSchema(**{**SCHEMA, "drop_columns": ["*"]})
    ds = load_csv(write(tmp_path, CSV), schema)
    assert "id" not in " ".join(ds.feature_names)
    assert ds.n == 5


def test_missing_values_override_keeps_question_marks(tmp_path):
    schema = ColumnSchema(**{**SCHEMA, "missing_values": [""]})
    ds = load_csv(write(tmp_path, CSV), schema)
    assert ds.n == 6
    assert "job=?" in ds.feature_names
