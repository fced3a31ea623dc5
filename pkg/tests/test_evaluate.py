"""Tests for accuracy metrics, audits and the rank-based comparison."""

import numpy as np
import pytest

from ctrec.errors import (
    DegenerateTable,
    ShapeMismatch,
    ZeroMeanActuals,
    ZeroReference,
)
from ctrec.evaluate import (
    NEMENYI_Q,
    AccuracyReport,
    forecast_skill,
    frobenius_gap,
    gross_discrepancies,
    mcb_nemenyi,
    negativity_audit,
    nrmse,
    read_accuracy_csv,
    write_accuracy_csv,
)
from ctrec.hierarchy import (
    ForecastSet,
    build_cross_sectional,
    build_cross_temporal,
    build_temporal,
)
from ctrec.reconcile import ct_bottom_up, sntz


@pytest.fixture
def ct3():
    cs = build_cross_sectional([[1, 1]])
    te = build_temporal(2, [2, 1])
    return build_cross_temporal(cs, te)


def test_nrmse_perfect_forecast():
    assert nrmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0


def test_nrmse_hand_value():
    # rmse 1 over mean 1
    assert nrmse([2.0, 0.0, 2.0, 0.0], [1.0, 1.0, 1.0, 1.0]) == \
        pytest.approx(100.0)


def test_nrmse_constant_bias():
    actuals = np.array([2.0, 4.0, 6.0])
    assert nrmse(actuals + 0.5, actuals) == \
        pytest.approx(100.0 * 0.5 / actuals.mean())


def test_nrmse_zero_mean_actuals():
    with pytest.raises(ZeroMeanActuals):
        nrmse([1.0, 1.0], [1.0, -1.0])


def test_nrmse_scale_invariance():
    rng = np.random.default_rng(0)
    f = rng.uniform(1, 2, 8)
    a = rng.uniform(1, 2, 8)
    assert nrmse(3.7 * f, 3.7 * a) == pytest.approx(nrmse(f, a))


def test_forecast_skill_values():
    assert forecast_skill(10.0, 10.0) == 0.0
    assert forecast_skill(26.71, 34.62) == pytest.approx(0.2285, abs=5e-4)
    assert forecast_skill(20.0, 10.0) == pytest.approx(-1.0)
    with pytest.raises(ZeroReference):
        forecast_skill(1.0, 0.0)


def test_forecast_skill_ratio_antisymmetry():
    a, b = 17.3, 23.9
    x = a / b
    assert forecast_skill(a, b) == pytest.approx(1.0 - x)
    assert forecast_skill(b, a) == pytest.approx(1.0 - 1.0 / x)


def test_gross_discrepancies_bottom_up_zero(ct3):
    rng = np.random.default_rng(1)
    Y = ct_bottom_up(rng.normal(size=(2, 2)), ct3)
    rep = gross_discrepancies(Y, ct3)
    assert rep.d_cs == pytest.approx(0.0, abs=1e-10)
    assert rep.d_te == pytest.approx(0.0, abs=1e-10)


def test_gross_discrepancies_single_perturbation(ct3):
    Y = ct_bottom_up(np.array([[1.0, 2.0], [3.0, 4.0]]), ct3)
    hf0 = ct3.te.block_slice(1).start
    Y.values[0, hf0] += 1.0
    rep = gross_discrepancies(Y, ct3)
    # oracle: dense constraint products on the perturbed matrix
    d_cs = np.abs(ct3.cs.constraints.toarray() @ Y.values).sum()
    d_te = np.abs(ct3.te.constraints.toarray() @ Y.values.T).sum()
    assert rep.d_cs == pytest.approx(d_cs) and d_cs == pytest.approx(1.0)
    assert rep.d_te == pytest.approx(d_te) and d_te == pytest.approx(1.0)


def test_gross_discrepancies_partly_bottom_up(ct3):
    from ctrec.covariance import cov_identity
    from ctrec.reconcile import partly_bottom_up

    rng = np.random.default_rng(2)
    Y = ForecastSet(rng.normal(5, 2, (3, 3)))
    out = partly_bottom_up(Y, ct3, "cs", cov_identity(3))
    rep = gross_discrepancies(out, ct3)
    scale = np.abs(Y.values).max()
    assert rep.d_cs <= 1e-8 * scale and rep.d_te <= 1e-8 * scale


def test_negativity_audit_all_nonnegative(ct3):
    rng = np.random.default_rng(3)
    runs = [("ctbu", r, ct_bottom_up(rng.uniform(0, 1, (2, 2)), ct3))
            for r in range(1, 4)]
    for row in negativity_audit(runs, ct3):
        assert row.reps_with_negative == 0
        assert row.min_value == 0.0 and row.max_value == 0.0


def test_negativity_audit_single_negative(ct3):
    Y = ct_bottom_up(np.array([[1.0, 2.0], [3.0, 4.0]]), ct3)
    Ybad = Y.copy()
    hf0 = ct3.te.block_slice(1).start
    Ybad.values[1, hf0] = -0.5
    rows = negativity_audit([("a", 1, Ybad), ("a", 2, Y)], ct3)
    by_k = {row.k: row for row in rows}
    assert by_k[1].reps_with_negative == 1
    assert by_k[1].min_value == -0.5 and by_k[1].max_value == -0.5
    assert by_k[1].min_series == 0 and by_k[1].max_series == 1
    assert by_k[2].reps_with_negative == 0


def test_negativity_audit_sntz_outputs_clean(ct3):
    rng = np.random.default_rng(4)
    runs = []
    for r in range(1, 6):
        Y = ForecastSet(rng.normal(0, 2, (3, 3)))
        runs.append(("oct(ols)+sntz", r, sntz(Y, ct3)))
    for row in negativity_audit(runs, ct3):
        assert row.reps_with_negative == 0


def test_mcb_dominant_approach():
    rng = np.random.default_rng(5)
    base = rng.uniform(10, 20, (6, 1))
    table = np.hstack([base, base + 1.0, base + 2.0])
    rep = mcb_nemenyi(table, 0.05, ("good", "mid", "bad"))
    assert rep.best == "good"
    assert rep.mean_ranks[0] == pytest.approx(1.0)


def test_mcb_tied_columns_average_ranks():
    table = np.tile(np.arange(1.0, 5.0)[:, None], (1, 2))
    rep = mcb_nemenyi(table, 0.05)
    np.testing.assert_allclose(rep.mean_ranks, [1.5, 1.5])


def test_mcb_hand_enumeration():
    table = np.array([[3.0, 1.0, 2.0],
                      [2.0, 1.0, 3.0],
                      [1.0, 2.0, 3.0],
                      [3.0, 2.0, 1.0]])
    rep = mcb_nemenyi(table, 0.05, ("a", "b", "c"))
    # direct enumeration of the per-row ascending ranks
    np.testing.assert_allclose(rep.mean_ranks,
                               [(3 + 2 + 1 + 3) / 4,
                                (1 + 1 + 2 + 2) / 4,
                                (2 + 3 + 3 + 1) / 4])
    expected_half = 0.5 * 3.3145 * np.sqrt(3 * 4 / (12.0 * 4))
    assert rep.half_width == pytest.approx(expected_half, rel=1e-6)


def test_mcb_half_width_scaling():
    rng = np.random.default_rng(6)
    small = rng.uniform(size=(10, 3))
    large = np.vstack([small] * 4)
    h1 = mcb_nemenyi(small, 0.05).half_width
    h2 = mcb_nemenyi(large, 0.05).half_width
    assert h2 == pytest.approx(h1 / 2.0, rel=1e-9)


def test_mcb_rank_sum_invariant():
    rng = np.random.default_rng(7)
    table = rng.uniform(size=(8, 5))
    rep = mcb_nemenyi(table, 0.05)
    assert rep.mean_ranks.sum() == pytest.approx(5 * 6 / 2)


def test_mcb_degenerate_inputs():
    with pytest.raises(DegenerateTable):
        mcb_nemenyi(np.ones((1, 3)), 0.05)
    with pytest.raises(DegenerateTable):
        mcb_nemenyi(np.ones((4, 1)), 0.05)
    with pytest.raises(DegenerateTable):
        mcb_nemenyi(np.ones((4, 3)), 0.2)


def test_nemenyi_table_against_scipy():
    from scipy.stats import studentized_range

    for alpha in (0.01, 0.05, 0.10):
        for j in (2, 3, 10, 30):
            table_q = NEMENYI_Q[alpha][j - 2]
            exact = studentized_range.ppf(1 - alpha, j, np.inf)
            assert table_q == pytest.approx(exact, abs=2e-4)
    # classical textbook constants
    assert NEMENYI_Q[0.05][0] == pytest.approx(2.772, abs=1e-3)
    assert NEMENYI_Q[0.05][1] == pytest.approx(3.314, abs=1e-3)
    assert NEMENYI_Q[0.05][8] == pytest.approx(4.474, abs=1e-3)


def test_frobenius_gap_values():
    a = np.zeros((2, 2))
    assert frobenius_gap(a, a) == 0.0
    assert frobenius_gap(np.eye(2), np.zeros((2, 2))) == \
        pytest.approx(np.sqrt(2))
    rng = np.random.default_rng(8)
    x, y = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    assert frobenius_gap(x, y) == \
        pytest.approx(np.sqrt(((x - y) ** 2).sum()))
    with pytest.raises(ShapeMismatch):
        frobenius_gap(np.zeros((2, 2)), np.zeros((3, 2)))


def test_accuracy_report_roundtrip(tmp_path):
    labels = ("tot", "a", "b")
    levels = ("L0", "L1", "L1")
    cells = {
        ("m1", 1): np.array([10.0, 20.0, 30.0]),
        ("m1", 2): np.array([11.0, 21.0, 31.0]),
        ("ref", 1): np.array([12.0, 24.0, 36.0]),
        ("ref", 2): np.array([12.0, 24.0, 36.0]),
    }
    report = AccuracyReport(labels, levels, (1, 2), ("m1", "ref"), "ref",
                            cells)
    np.testing.assert_allclose(report.skill_vector("m1", 1),
                               [1 - 10 / 12, 1 - 20 / 24, 1 - 30 / 36])
    assert report.level_mean("L1", "m1", 1) == pytest.approx(25.0)
    path = tmp_path / "acc.csv"
    write_accuracy_csv(path, report)
    labels2, orders2, approaches2, cells2 = read_accuracy_csv(path)
    assert labels2 == labels and orders2 == (1, 2)
    assert set(approaches2) == {"m1", "ref"}
    np.testing.assert_allclose(cells2[("m1", 1)], cells[("m1", 1)])
