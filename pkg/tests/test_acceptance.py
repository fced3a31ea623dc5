"""Acceptance suite.

Each test implements one release criterion at its stated tolerance and
prints a single pass/fail line (run with ``pytest -s`` to see them all).
"""

import resource
import time
import tracemalloc

import numpy as np

from ctrec.approaches import apply_approach, parse_approach
from ctrec.covariance import (
    CovarianceModel,
    ResidualPanel,
    cov_kron,
    cov_structural,
    ct_covariance,
)
from ctrec.evaluate import (
    forecast_skill,
    frobenius_gap,
    mcb_nemenyi,
    negativity_audit,
)
from ctrec.experiment import (
    SeriesPanel,
    naive_base,
    residual_panel_from_window,
)
from ctrec.hierarchy import (
    ForecastSet,
    build_cross_sectional,
    build_cross_temporal,
    build_temporal,
)
from ctrec.reconcile import (
    coherence_gap,
    reconcile_iterative,
    reconcile_oct,
    sequential,
    sntz,
)

from helpers import (
    kkt_reconcile,
    pv324_aggregation,
    random_forecasts,
    random_instance,
)


def _report(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num} ({name}): {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def _random_panel(rng, ct, periods=16):
    return ResidualPanel(rng.normal(0.0, 1.0,
                                    (ct.cs.n, ct.te.width, periods)))


def test_criterion_1_coherence_suite():
    rng = np.random.default_rng(101)
    rotation = ["oct(ols)", "oct(struc)", "oct(wlsv)", "oct(bdshr)",
                "ctbu", "pbu(te=struc)", "pbu(cs=wls)",
                "oct(ols)+sntz", "oct(struc)+sntz", "pbu(te=wlsv)+sntz"]
    start = time.perf_counter()
    worst = 0.0
    for i in range(200):
        ct = random_instance(rng)  # n <= 10, m <= 12
        Y = ForecastSet(random_forecasts(rng, ct))
        spec = parse_approach(rotation[i % len(rotation)])
        panel = _random_panel(rng, ct) if spec.needs_residuals else None
        out = apply_approach(spec, Y, ct, panel)
        scale = np.abs(Y.vec()).max()
        worst = max(worst, coherence_gap(out, ct) / scale)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 30.0
    _report(1, "coherence", ok,
            f"200 instances, worst relative gap {worst:.2e}, "
            f"{elapsed:.1f}s")


def test_criterion_2_theorem_equivalences():
    rng = np.random.default_rng(102)
    worst_order = worst_joint = 0.0
    iters_ok = True
    for _ in range(100):
        ct = random_instance(rng, max_bottom=5, max_m=6)
        while ct.cs.n > 6:
            ct = random_instance(rng, max_bottom=5, max_m=6)
        Y = ForecastSet(random_forecasts(rng, ct))
        W = CovarianceModel("w", diag=rng.uniform(0.5, 3.0, ct.cs.n))
        Om = CovarianceModel("o", diag=rng.uniform(0.5, 3.0, ct.te.width))
        tcs = sequential(Y, ct, W, Om, order="tcs")
        cst = sequential(Y, ct, W, Om, order="cst")
        joint = reconcile_oct(Y, ct, cov_kron(W, Om, ct))
        ref = max(np.linalg.norm(tcs.values), 1e-300)
        worst_order = max(worst_order,
                          frobenius_gap(tcs.values, cst.values) / ref)
        worst_joint = max(worst_joint,
                          frobenius_gap(tcs.values, joint.values) / ref)
        _, trace = reconcile_iterative(Y, ct, W, Om)
        iters_ok = iters_ok and trace.iterations == 1 and trace.converged
    ok = worst_order <= 1e-8 and worst_joint <= 1e-8 and iters_ok
    _report(2, "two-step equivalence", ok,
            f"100 diagonal pairs, order gap {worst_order:.2e}, "
            f"joint gap {worst_joint:.2e}, single-pass={iters_ok}")


def test_criterion_3_oracle_suite():
    rng = np.random.default_rng(103)
    worst = worst_idem = 0.0
    done = 0
    while done < 50:
        ct = random_instance(rng, max_bottom=3, max_m=4)
        if ct.dim > 40:
            continue
        done += 1
        Y = ForecastSet(random_forecasts(rng, ct))
        if done % 2:
            cov = CovarianceModel("d", diag=rng.uniform(0.5, 3.0, ct.dim))
            dense_cov = np.diag(cov.diag)
        else:
            A = rng.normal(size=(ct.dim, ct.dim))
            dense_cov = A @ A.T / ct.dim + 0.5 * np.eye(ct.dim)
            cov = CovarianceModel("f", dense=dense_cov)
        expected = kkt_reconcile(Y.vec(), ct.constraints.toarray(),
                                 dense_cov)
        scale = max(np.abs(expected).max(), 1e-300)
        proj = reconcile_oct(Y, ct, cov, form="projection")
        struc = reconcile_oct(Y, ct, cov, form="structural")
        worst = max(worst, np.abs(proj.vec() - expected).max() / scale,
                    np.abs(struc.vec() - expected).max() / scale)
        again = reconcile_oct(proj, ct, cov, form="projection")
        worst_idem = max(worst_idem,
                         np.abs(again.vec() - proj.vec()).max() / scale)
    ok = worst <= 1e-8 and worst_idem <= 1e-8
    _report(3, "dense oracle", ok,
            f"50 instances, worst oracle gap {worst:.2e}, "
            f"idempotency gap {worst_idem:.2e}")


def test_criterion_4_bottom_up_orderings():
    from ctrec.reconcile import ct_bottom_up

    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(100):
        ct = random_instance(rng)
        B1 = rng.normal(size=(ct.cs.n_b, ct.te.m))
        joint = ct_bottom_up(B1, ct).values
        S = ct.cs.summing.toarray()
        R = ct.te.summing.toarray()
        scale = max(np.abs(joint).max(), 1e-300)
        worst = max(worst,
                    np.abs(joint - (S @ B1) @ R.T).max() / scale,
                    np.abs(joint - S @ (B1 @ R.T)).max() / scale)
    _report(4, "bottom-up orderings", worst <= 1e-12,
            f"100 panels, worst relative gap {worst:.2e}")


def test_criterion_5_iterative_convergence_study():
    from ctrec.approaches import _cs_models, _te_models

    start = time.perf_counter()
    rng = np.random.default_rng(105)
    n_b, m, T = 16, 4, 120
    level = rng.uniform(2, 6, n_b)[:, None]
    season = 1 + 0.5 * np.sin(2 * np.pi * (np.arange(T) % m) / m
                              + rng.uniform(0, 6, (n_b, 1)))
    bottom = level * season + rng.gamma(2.0, 0.3, (n_b, T))
    rows = [np.ones(n_b)]
    off = 0
    for z in (5, 6, 5):
        r = np.zeros(n_b)
        r[off:off + z] = 1
        rows.append(r)
        off += z
    cs = build_cross_sectional(np.array(rows))  # 20 series in total
    panel = SeriesPanel.from_bottom(bottom, cs)
    te = build_temporal(m, [4, 2, 1])
    ct = build_cross_temporal(cs, te)
    origin, window = 25 * m, 20 * m
    Y = naive_base(panel, origin, te, "smooth", window)
    respanel = residual_panel_from_window(panel, origin, te, "smooth",
                                          window)
    target = reconcile_oct(Y, ct, ct_covariance("wlsv", ct, respanel))
    cs_models = _cs_models("wls", ct, respanel, 0.0, None)
    te_models = _te_models("wlsv", ct, respanel, 0.0, None)
    deltas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
    gaps = []
    for delta in deltas:
        out, _ = reconcile_iterative(Y, ct, cs_models, te_models,
                                     delta=delta, norm="linf",
                                     max_iter=20000)
        gaps.append(frobenius_gap(out.values, target.values))
    elapsed = time.perf_counter() - start
    monotone = all(gaps[i + 1] <= gaps[i] for i in range(len(gaps) - 1))
    shrunk = gaps[-1] < 1e-3 * gaps[0]
    ok = monotone and shrunk and elapsed < 60.0
    _report(5, "iterative-to-joint convergence", ok,
            f"gaps {gaps[0]:.2e} -> {gaps[-1]:.2e}, monotone={monotone}, "
            f"{elapsed:.1f}s")


def test_criterion_6_sntz_suite():
    rng = np.random.default_rng(106)
    worst_gap = 0.0
    min_value = 0.0
    audit_rows = []
    for i in range(200):
        ct = random_instance(rng)
        # reconciled sets with guaranteed negative entries
        Y = ForecastSet(random_forecasts(rng, ct) - 4.0)
        rec = reconcile_oct(Y, ct, cov_structural(ct))
        out = sntz(rec, ct)
        min_value = min(min_value, float(out.values.min()))
        scale = max(np.abs(Y.vec()).max(), 1e-300)
        worst_gap = max(worst_gap, coherence_gap(out, ct) / scale)
        audit_rows = negativity_audit([("sntz", 1, out)], ct)
        assert all(row.reps_with_negative == 0 and row.min_value == 0.0
                   for row in audit_rows)
    ok = min_value >= 0.0 and worst_gap <= 1e-8
    _report(6, "set-negative-to-zero", ok,
            f"200 sets, global min {min_value}, worst relative gap "
            f"{worst_gap:.2e}")


def test_criterion_7_skill_spot_value():
    value = forecast_skill(26.71, 34.62)
    ok = abs(value - 0.2285) <= 5e-4
    _report(7, "skill spot value", ok, f"skill(26.71, 34.62) = {value:.6f}")


def test_criterion_8_mcb_suite():
    rng = np.random.default_rng(108)
    base = rng.uniform(10, 20, (12, 1))
    dominant = mcb_nemenyi(np.hstack([base, base + 1, base + 2]), 0.05,
                           ("a", "b", "c"))
    tie = mcb_nemenyi(np.tile(rng.uniform(size=(6, 1)), (1, 2)), 0.05)
    small = rng.uniform(size=(25, 4))
    big = np.vstack([small] * 4)
    h1 = mcb_nemenyi(small, 0.05).half_width
    h2 = mcb_nemenyi(big, 0.05).half_width
    ratio = h2 / h1
    ok = (dominant.mean_ranks[0] == 1.0
          and np.allclose(tie.mean_ranks, [1.5, 1.5])
          and abs(ratio - 0.5) <= 0.05 * 0.5)
    _report(8, "rank comparison", ok,
            f"dominant rank {dominant.mean_ranks[0]}, tie ranks "
            f"{tie.mean_ranks.tolist()}, half-width ratio {ratio:.4f}")


def test_criterion_9_benchmark_scale():
    rng = np.random.default_rng(109)
    tracemalloc.start()
    start = time.perf_counter()
    cs = build_cross_sectional(pv324_aggregation())
    te = build_temporal(24, [24, 12, 8, 6, 4, 3, 2, 1])
    ct = build_cross_temporal(cs, te)
    Y = ForecastSet(rng.uniform(0.0, 50.0, (cs.n, te.width)))
    out = reconcile_oct(Y, ct, cov_structural(ct))
    elapsed = time.perf_counter() - start
    _, traced_peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    rss_peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
    gap = coherence_gap(out, ct) / np.abs(Y.vec()).max()
    ok = (ct.dim == 19440 and ct.summing.shape == (19440, 7632)
          and ct.constraints.shape == (11808, 19440)
          and elapsed < 10.0 and gap <= 1e-8
          and traced_peak < 1 << 30 and rss_peak < 1 << 30)
    _report(9, "benchmark-scale structure", ok,
            f"dims {ct.constraints.shape}, {elapsed:.2f}s, "
            f"python peak {traced_peak / 1e6:.0f}MB, "
            f"rss peak {rss_peak / 1e6:.0f}MB, gap {gap:.2e}")


def test_criterion_10_end_to_end_determinism(tmp_path):
    from ctrec.cli import main

    cfg = tmp_path / "exp.cfg"
    cfg.write_text(
        "m = 4\norders = 4,2,1\nwindow_length = 16\nhorizon = 8\n"
        "evaluation_slice = 5..8\nreplications = 3\n"
        "approaches = oct(ols), oct(wlsv), pbu(te=wlsv)+sntz, ctbu\n"
        "reference = persbu\nbase = smooth\nseed = 20\n")
    outputs = []
    for run in ("one", "two"):
        outdir = tmp_path / run
        code = main(["experiment", "--config", str(cfg), "--synth",
                     "--plants", "6", "--zones", "3,3", "--days", "14",
                     "--cloud", "0.4", "--out-dir", str(outdir)])
        assert code == 0
        outputs.append({f.name: f.read_bytes()
                        for f in sorted(outdir.iterdir())})
    same = outputs[0] == outputs[1]
    files = sorted(outputs[0])
    _report(10, "end-to-end determinism", same,
            f"two seeded runs, files {files} byte-identical={same}")
