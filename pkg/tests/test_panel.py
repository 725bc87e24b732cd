import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.domain.errors import PanelValidationError
from app.domain.schemas import PanelSchema
from app.services.panel.loader import (
    default_schema,
    frame_to_dataset,
    load_long_csv,
    validate_long_csv,
    validate_long_frame,
    write_long_csv,
)
from app.services.panel.transforms import derive_groups, double_demean, two_period_view
from tests.conftest import make_staggered_panel

SCHEMA = PanelSchema(unit="unit", time="time", outcome="y", group="g", tv=["x"], ti=["z"])


def _long_frame() -> pd.DataFrame:
    rows = []
    groups = {"a": 2003, "b": 0, "c": 2004, "d": 0, "e": 2003}
    for i, (u, g) in enumerate(groups.items()):
        for t in (2002, 2003, 2004):
            rows.append({"unit": u, "time": t, "y": i + 0.1 * t, "g": g, "x": i * t / 1000.0, "z": i % 2})
    return pd.DataFrame(rows)


def test_group_column_maps_to_internal_indices(tmp_path):
    path = tmp_path / "panel.csv"
    _long_frame().to_csv(path, index=False)
    data = load_long_csv(path, SCHEMA)
    assert data.periods == (2002, 2003, 2004)
    assert data.unit_ids == ("a", "b", "c", "d", "e")
    assert_array_equal(data.group, [2, 4, 3, 4, 2])
    assert data.treated_groups == [2, 3]
    assert data.label(2) == 2003
    assert data.index(2004) == 3
    assert data.group_label(data.never_index) is None


def test_treat_column_derives_groups():
    frame = _long_frame()
    frame["d"] = ((frame["g"] > 0) & (frame["time"] >= frame["g"])).astype(int)
    schema = PanelSchema(unit="unit", time="time", outcome="y", treat="d", tv=["x"], ti=["z"])
    data = frame_to_dataset(frame.drop(columns=["g"]), schema)
    assert_array_equal(data.group, [2, 4, 3, 4, 2])


def test_treatment_reversal_is_rejected():
    with pytest.raises(PanelValidationError) as err:
        derive_groups(np.array([[0, 1, 0], [0, 0, 0]]))
    assert err.value.report.errors[0].code == "treatment_reversal"


def test_unbalanced_panel_is_reported(data_dir):
    schema = PanelSchema(unit="unit", time="time", outcome="y", group="g", tv=["x"])
    report = validate_long_csv(data_dir / "malformed_panel.csv", schema)
    assert not report.ok
    assert [e.code for e in report.errors] == ["unbalanced_panel"]
    assert "unbalanced panel" in report.errors[0].message
    with pytest.raises(PanelValidationError, match="unbalanced panel"):
        load_long_csv(data_dir / "malformed_panel.csv", schema)


def test_every_issue_is_collected():
    frame = _long_frame().astype({"y": object, "x": object})
    frame.loc[0, "y"] = "oops"
    frame.loc[4, "x"] = None
    report = validate_long_frame(frame, SCHEMA)
    assert {e.code for e in report.errors} == {"non_numeric", "missing_value"}


def test_time_invariant_column_must_not_vary():
    frame = _long_frame()
    frame.loc[1, "z"] = 5
    report = validate_long_frame(frame, SCHEMA)
    assert [e.code for e in report.errors] == ["ti_varies"]


def test_first_period_treatment_rejected_or_dropped():
    frame = _long_frame()
    frame.loc[frame["unit"] == "d", "g"] = 2002
    report = validate_long_frame(frame, SCHEMA)
    assert [e.code for e in report.errors] == ["treated_first_period"]

    data = frame_to_dataset(frame, SCHEMA, drop_always_treated=True)
    assert data.unit_ids == ("a", "b", "c", "e")
    report = validate_long_frame(frame, SCHEMA, drop_always_treated=True)
    assert report.ok
    assert "dropped_always_treated" in [w.code for w in report.warnings]


def test_small_groups_and_missing_never_treated_warn():
    frame = _long_frame()
    frame.loc[frame["g"] == 0, "g"] = 2004
    report = validate_long_frame(frame, SCHEMA)
    codes = [w.code for w in report.warnings]
    assert "no_never_treated" in codes
    assert "small_group" in codes


def test_outcome_is_optional():
    schema = PanelSchema(unit="unit", time="time", group="g", tv=["x"], ti=["z"])
    data = frame_to_dataset(_long_frame().drop(columns=["y"]), schema)
    assert data.outcome is None
    with pytest.raises(ValueError):
        data.require_outcome()


def test_schema_needs_exactly_one_treatment_column():
    with pytest.raises(ValueError):
        PanelSchema(unit="u", time="t")
    with pytest.raises(ValueError):
        PanelSchema(unit="u", time="t", treat="d", group="g")


def test_long_csv_round_trip_is_exact(tmp_path):
    data = make_staggered_panel(seed=3, n=40, T=4, n_groups=2, weighted=True, region=3)
    path = tmp_path / "out.csv"
    schema = write_long_csv(data, path)
    back = load_long_csv(path, schema)
    assert back.unit_ids == data.unit_ids
    assert back.periods == data.periods
    assert_array_equal(back.group, data.group)
    assert_array_equal(back.outcome, data.outcome)
    assert_array_equal(back.tv, data.tv)
    assert_array_equal(back.ti, data.ti)
    assert_array_equal(back.sample_weight, data.sample_weight)
    assert_array_equal(back.region, data.region)
    assert default_schema(data).region == "region"


def test_two_period_view_requires_two_groups():
    data = make_staggered_panel(seed=5, n=60, T=3, n_groups=2)
    with pytest.raises(PanelValidationError):
        two_period_view(data, 3)
    keep = np.flatnonzero(data.group != 2)
    view = two_period_view(data.take(keep), 3)
    assert_allclose(view.dX, view.X_post - view.X_pre)
    assert set(np.unique(view.treat)) <= {0.0, 1.0}


def test_double_demean_removes_additive_effects():
    rng = np.random.default_rng(0)
    n, T = 30, 5
    w = rng.uniform(0.5, 2.0, size=n)
    m = rng.normal(size=n)[:, None] + rng.normal(size=T)[None, :]
    assert_allclose(double_demean(m, w), 0.0, atol=1e-12)

    cells = np.array(["a", "b", "c"] * 10)
    block = {c: rng.normal(size=T) for c in "abc"}
    m2 = rng.normal(size=n)[:, None] + np.stack([block[c] for c in cells])
    assert_allclose(double_demean(m2, w, cells), 0.0, atol=1e-12)


def test_double_demean_two_by_two():
    out = double_demean(np.array([[0.0, 1.0], [0.0, 0.0]]), np.ones(2))
    assert_allclose(out, [[-0.25, 0.25], [0.25, -0.25]], atol=1e-15)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_double_demean_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(40, 6))
    w = rng.uniform(0.5, 2.0, size=40)
    once = double_demean(m, w)
    assert_allclose(double_demean(once, w), once, atol=1e-12)
    assert_allclose(once.sum(axis=1), 0.0, atol=1e-10)
    assert_allclose(np.average(once, axis=0, weights=w), 0.0, atol=1e-10)


@pytest.mark.parametrize("T", [2, 4, 7])
def test_derive_groups_inverts_the_treatment_matrix(T):
    rng = np.random.default_rng(T)
    groups = rng.integers(2, T + 2, size=50)
    D = (np.arange(1, T + 1)[None, :] >= groups[:, None]).astype(int)
    assert_array_equal(derive_groups(D), groups)
    assert_array_equal(derive_groups(np.array([[0, 0, 1, 1], [0, 0, 0, 0]])), [3, 5])


def test_take_suffixes_repeated_units():
    data = make_staggered_panel(seed=2, n=10, T=3, n_groups=1)
    boot = data.take(np.array([0, 0, 3]))
    assert boot.unit_ids == (data.unit_ids[0], f"{data.unit_ids[0]}#1", data.unit_ids[3])
    assert_array_equal(boot.outcome[1], data.outcome[0])
