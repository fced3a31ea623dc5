"""Reconciliation operators.

Base forecasts are mapped onto the coherent subspace by minimising a
covariance-weighted quadratic adjustment subject to the zero constraints
(equality-constrained generalized least squares).  Two closed forms are
implemented: the projection form, which solves a system in the constraints,
and the structural form, which solves for the bottom high-frequency
forecasts and re-aggregates.  Neither ever forms an explicit inverse; the
positive-definite system is factorised and solved.

Besides the simultaneous solver this module provides bottom-up and partly
bottom-up aggregation, the alternating (temporal / cross-sectional)
iterative procedure, the projection-averaging heuristic, and the
set-negative-to-zero clamp for non-negative output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .covariance import CovarianceModel
from .errors import (
    CoherenceViolation,
    NotConverged,
    ShapeMismatch,
    SingularSystem,
)
from .hierarchy import (
    CrossSectionalStructure,
    CrossTemporalStructure,
    ForecastSet,
    TemporalStructure,
    as_forecast_set,
)

__all__ = [
    "IterationTrace",
    "reconcile_cs",
    "reconcile_te",
    "reconcile_oct",
    "ct_bottom_up",
    "partly_bottom_up",
    "sequential",
    "reconcile_iterative",
    "reconcile_ka",
    "sntz",
    "cs_projection_matrix",
    "te_projection_matrix",
    "coherence_gap",
]

COHERENCE_RTOL = 1e-8
_DENSE_SOLVE_MAX = 600  # constraint counts up to this are solved densely


def _norm_fn(kind: str):
    if kind == "l1":
        return lambda D: float(np.abs(D).sum())
    if kind == "linf":
        return lambda D: float(np.abs(D).max()) if D.size else 0.0
    raise ShapeMismatch(f"unknown norm {kind!r} (use 'l1' or 'linf')")


def _spd_solver(A, n_constraints: int):
    """Factor the constraint-space system once; return a solve callable."""
    if sp.issparse(A):
        if n_constraints <= _DENSE_SOLVE_MAX:
            A = A.toarray()
        else:
            try:
                lu = spla.splu(A.tocsc())
            except RuntimeError as exc:
                raise SingularSystem(str(exc)) from exc

            def solve(b):
                x = lu.solve(np.asarray(b))
                if not np.isfinite(x).all():
                    raise SingularSystem("sparse factor produced non-finite "
                                         "values")
                return x

            return solve
    try:
        cho = sla.cho_factor(np.asarray(A))
    except (sla.LinAlgError, ValueError) as exc:
        raise SingularSystem(f"constraint system not positive definite: "
                             f"{exc}") from exc
    return lambda b: sla.cho_solve(cho, np.asarray(b))


class _Projector:
    """Projection onto the null space of a constraint matrix, in the metric
    of a covariance model.  The factorisation is reused across
    applications, which makes time-by-time and per-series sweeps cheap."""

    def __init__(self, constraints: sp.csr_matrix, cov: CovarianceModel):
        if cov.dim != constraints.shape[1]:
            raise ShapeMismatch(
                f"covariance of dim {cov.dim} does not match constraint "
                f"width {constraints.shape[1]}")
        self.C = constraints
        self.n_constraints = constraints.shape[0]
        if self.n_constraints == 0:
            self.OC = None
            return
        self.OC = cov.matmat(constraints.T)
        A = constraints @ self.OC
        self._solve = _spd_solver(A, self.n_constraints)

    def apply(self, X):
        """Project columns of X (shape (dim,) or (dim, h))."""
        if self.OC is None:
            return np.asarray(X, dtype=float)
        r = self.C @ X
        x = self._solve(r)
        out = X - self.OC @ x
        return np.asarray(out)

    def matrix(self) -> np.ndarray:
        """Dense projection matrix (small problems only)."""
        n = self.C.shape[1]
        if self.OC is None:
            return np.eye(n)
        corr = self.OC @ self._solve(self.C.toarray())
        return np.eye(n) - np.asarray(corr)


def cs_projection_matrix(cs: CrossSectionalStructure,
                         cov: CovarianceModel) -> np.ndarray:
    """Dense n x n cross-sectional reconciliation matrix."""
    return _Projector(cs.constraints, cov).matrix()


def te_projection_matrix(te: TemporalStructure,
                         cov: CovarianceModel) -> np.ndarray:
    """Dense (k*+m) x (k*+m) temporal reconciliation matrix."""
    return _Projector(te.constraints, cov).matrix()


def reconcile_cs(Yk, cs: CrossSectionalStructure, cov: CovarianceModel,
                 check: bool = True) -> np.ndarray:
    """Cross-sectionally reconcile each column of an n x h matrix."""
    Y = np.asarray(Yk, dtype=float)
    one_d = Y.ndim == 1
    Y2 = Y[:, None] if one_d else Y
    if Y2.shape[0] != cs.n:
        raise ShapeMismatch(f"expected {cs.n} rows, got {Y2.shape[0]}")
    out = _Projector(cs.constraints, cov).apply(Y2)
    if check:
        _check_gap(np.abs(cs.constraints @ out).max(initial=0.0), Y2,
                   "cross-sectional")
    return out[:, 0] if one_d else out


def reconcile_te(y, te: TemporalStructure, cov: CovarianceModel,
                 check: bool = True) -> np.ndarray:
    """Temporally reconcile one series (or the columns of a matrix)."""
    Y = np.asarray(y, dtype=float)
    one_d = Y.ndim == 1
    Y2 = Y[:, None] if one_d else Y
    if Y2.shape[0] != te.width:
        raise ShapeMismatch(f"expected {te.width} rows, got {Y2.shape[0]}")
    out = _Projector(te.constraints, cov).apply(Y2)
    if check and te.k_star:
        _check_gap(np.abs(te.constraints @ out).max(initial=0.0), Y2,
                   "temporal")
    return out[:, 0] if one_d else out


def _check_gap(gap: float, ref, what: str) -> None:
    scale = float(np.abs(ref).max()) or 1.0
    if gap > COHERENCE_RTOL * scale:
        raise CoherenceViolation(
            f"{what} residual {gap:.3e} exceeds {COHERENCE_RTOL:.0e} x "
            f"{scale:.3e}; the covariance may be badly conditioned "
            f"(consider a jitter)")


def coherence_gap(Y, ct: CrossTemporalStructure) -> float:
    """Largest absolute entry of the full constraint residual."""
    fs = as_forecast_set(Y, ct)
    r = ct.constraints @ fs.vec()
    return float(np.abs(r).max()) if r.size else 0.0


def reconcile_oct(Y, ct: CrossTemporalStructure, cov: CovarianceModel,
                  form: str = "projection", check: bool = True
                  ) -> ForecastSet:
    """Optimal simultaneous cross-temporal reconciliation.

    ``form="projection"`` adjusts the base vector through the constraint
    system; ``form="structural"`` solves for the bottom high-frequency
    block and re-aggregates.  Both agree up to solver tolerance.
    """
    fs = as_forecast_set(Y, ct)
    if cov.dim != ct.dim:
        raise ShapeMismatch(f"covariance of dim {cov.dim} does not match "
                            f"structure dim {ct.dim}")
    yvec = fs.vec()
    if form == "projection":
        out = _Projector(ct.constraints, cov).apply(yvec)
    elif form == "structural":
        out = _structural_solve(yvec, ct, cov)
    else:
        raise ShapeMismatch(f"unknown form {form!r}")
    result = ForecastSet.from_vec(out, fs.n, fs.width, fs.labels)
    if check:
        _check_gap(coherence_gap(result, ct), yvec, "cross-temporal")
    return result


def _structural_solve(yvec: np.ndarray, ct: CrossTemporalStructure,
                      cov: CovarianceModel) -> np.ndarray:
    F = ct.summing
    solve_cov = cov.solver()
    OiF = solve_cov(F)
    B = F.T @ OiF
    b = F.T @ solve_cov(yvec)
    bottom = _spd_solver(B, B.shape[0])(b)
    return np.asarray(F @ bottom)


def ct_bottom_up(B1, ct: CrossTemporalStructure) -> ForecastSet:
    """Aggregate high-frequency bottom forecasts to every series and order.

    The result is exactly coherent: it is the image of the bottom block
    under the cross-temporal summing map, equivalently cross-sectional
    bottom-up followed by temporal bottom-up or vice versa.
    """
    B1 = np.asarray(B1, dtype=float)
    if B1.shape != (ct.cs.n_b, ct.te.m):
        raise ShapeMismatch(f"expected bottom block of shape "
                            f"{(ct.cs.n_b, ct.te.m)}, got {B1.shape}")
    per_series = ct.te.aggregate(B1)              # (n_b, k*+m)
    values = np.asarray(ct.cs.summing @ per_series)
    return ForecastSet(values)


def partly_bottom_up(Y, ct: CrossTemporalStructure, first: str,
                     cov, check: bool = True) -> ForecastSet:
    """Reconcile along one dimension, then bottom-up along the other.

    ``first="te"``: temporally reconcile each bottom series (``cov`` is one
    temporal model or a sequence of n_b per-series models), then aggregate
    its high-frequency block.  ``first="cs"``: cross-sectionally reconcile
    the high-frequency block with an n x n model, then aggregate the
    reconciled bottom rows.
    """
    fs = as_forecast_set(Y, ct)
    n_a, n_b = ct.cs.n_a, ct.cs.n_b
    hf = ct.te.block_slice(1)
    if first == "te":
        bottom = fs.values[n_a:, :].T             # (k*+m, n_b)
        if isinstance(cov, CovarianceModel):
            rec = reconcile_te(bottom, ct.te, cov, check=check)
        else:
            covs = list(cov)
            if len(covs) != n_b:
                raise ShapeMismatch(f"need {n_b} per-series models, "
                                    f"got {len(covs)}")
            rec = np.column_stack([
                reconcile_te(bottom[:, i], ct.te, covs[i], check=check)
                for i in range(n_b)])
        B1 = rec.T[:, hf]
    elif first == "cs":
        if not isinstance(cov, CovarianceModel):
            raise ShapeMismatch("cross-sectional-first needs a single model")
        rec = reconcile_cs(fs.values[:, hf], ct.cs, cov, check=check)
        B1 = rec[n_a:, :]
    else:
        raise ShapeMismatch(f"first must be 'te' or 'cs', got {first!r}")
    out = ct_bottom_up(B1, ct)
    out.labels = fs.labels
    return out


def _per_order_projectors(ct: CrossTemporalStructure, cs_covs):
    """One cross-sectional projector per temporal order."""
    if isinstance(cs_covs, CovarianceModel):
        shared = _Projector(ct.cs.constraints, cs_covs)
        return {k: shared for k in ct.te.orders}
    projectors = {}
    for k in ct.te.orders:
        if k not in cs_covs:
            raise ShapeMismatch(f"missing cross-sectional model for "
                                f"order {k}")
        projectors[k] = _Projector(ct.cs.constraints, cs_covs[k])
    return projectors


def _te_apply_fn(ct: CrossTemporalStructure, te_covs):
    """Function applying temporal reconciliation to every series (rows)."""
    if isinstance(te_covs, CovarianceModel):
        proj = _Projector(ct.te.constraints, te_covs)
        return lambda V: proj.apply(V.T).T
    projs = [
        _Projector(ct.te.constraints, c) for c in te_covs]
    if len(projs) != ct.cs.n:
        raise ShapeMismatch(f"need {ct.cs.n} per-series temporal models, "
                            f"got {len(projs)}")

    def apply(V):
        out = np.empty_like(V)
        for i, proj in enumerate(projs):
            out[i, :] = proj.apply(V[i, :])
        return out

    return apply


def _cs_apply_fn(ct: CrossTemporalStructure, cs_covs):
    projectors = _per_order_projectors(ct, cs_covs)

    def apply(V):
        out = V.copy()
        for k in ct.te.orders:
            cols = ct.te.block_slice(k)
            out[:, cols] = projectors[k].apply(V[:, cols])
        return out

    return apply


def sequential(Y, ct: CrossTemporalStructure, cs_covs, te_covs,
               order: str = "cst") -> ForecastSet:
    """One two-step pass: reconcile along both dimensions in sequence.

    ``order="cst"`` runs cross-sectional then temporal; ``"tcs"`` the
    reverse.  With covariances constant across orders and series the two
    orders coincide and the result is already fully coherent.
    """
    fs = as_forecast_set(Y, ct)
    te_apply = _te_apply_fn(ct, te_covs)
    cs_apply = _cs_apply_fn(ct, cs_covs)
    if order == "cst":
        values = te_apply(cs_apply(fs.values))
    elif order == "tcs":
        values = cs_apply(te_apply(fs.values))
    else:
        raise ShapeMismatch(f"order must be 'cst' or 'tcs', got {order!r}")
    return ForecastSet(values, fs.labels)


@dataclass
class IterationTrace:
    """Record of one iterative reconciliation run.

    ``d_te_history`` holds the monitored gross discrepancy after each
    iteration: temporal discrepancies for the temporal-first order,
    cross-sectional ones for the reversed order (see ``monitored``).
    """

    iterations: int
    d_te_history: list[float] = field(default_factory=list)
    norm_kind: str = "linf"
    delta: float = 0.0
    converged: bool = False
    monitored: str = "te"


def reconcile_iterative(Y, ct: CrossTemporalStructure, cs_covs, te_covs,
                        delta: float | None = None, norm: str = "linf",
                        max_iter: int = 100, order: str = "tcs"
                        ) -> tuple[ForecastSet, IterationTrace]:
    """Alternate temporal and cross-sectional reconciliation to a tolerance.

    Each iteration reconciles every series through the temporal hierarchy
    and every order across the cross-section (``order="tcs"``; ``"cst"``
    swaps the two steps).  After the pass the residual incoherence along
    the dimension fixed first is measured with the chosen norm ('l1' or
    'linf'); iteration stops when it drops below ``delta``.

    ``delta`` defaults to 1e-6 times the median absolute base forecast,
    making the criterion scale-aware.  At least one full pass always runs.
    Raises :class:`NotConverged` (carrying the last iterate and the trace)
    when ``max_iter`` passes are not enough.
    """
    fs = as_forecast_set(Y, ct)
    if max_iter < 1:
        raise ShapeMismatch("max_iter must be at least 1")
    if order not in ("tcs", "cst"):
        raise ShapeMismatch(f"order must be 'tcs' or 'cst', got {order!r}")
    if delta is None:
        scale = float(np.median(np.abs(fs.values)))
        if scale == 0.0:
            scale = float(np.abs(fs.values).max()) or 1.0
        delta = 1e-6 * scale
    if delta <= 0:
        raise ShapeMismatch("delta must be positive")
    norm_of = _norm_fn(norm)

    te_apply = _te_apply_fn(ct, te_covs)
    cs_apply = _cs_apply_fn(ct, cs_covs)
    trace = IterationTrace(0, [], norm, delta, False,
                           "te" if order == "tcs" else "cs")

    cur = fs.values.copy()
    for _ in range(max_iter):
        if order == "tcs":
            cur = cs_apply(te_apply(cur))
            disc = ct.te.constraints @ cur.T if ct.te.k_star \
                else np.zeros((0, ct.cs.n))
        else:
            cur = te_apply(cs_apply(cur))
            disc = ct.cs.constraints @ cur
        d = norm_of(np.asarray(disc))
        trace.iterations += 1
        trace.d_te_history.append(d)
        if d < delta:
            trace.converged = True
            return ForecastSet(cur, fs.labels), trace
    raise NotConverged(
        f"no convergence after {max_iter} iterations "
        f"(last discrepancy {trace.d_te_history[-1]:.3e} vs delta "
        f"{delta:.3e})",
        forecasts=ForecastSet(cur, fs.labels), trace=trace)


def reconcile_ka(Y, ct: CrossTemporalStructure, te_covs, cs_covs
                 ) -> ForecastSet:
    """Projection-averaging heuristic.

    Temporally reconcile every series, then apply the average of the
    per-order cross-sectional reconciliation matrices to all columns.  The
    output is coherent in both dimensions: the averaged matrices share the
    cross-sectional constraint kernel, and applying one matrix to every
    column keeps each row inside the temporally coherent row space.
    """
    fs = as_forecast_set(Y, ct)
    te_apply = _te_apply_fn(ct, te_covs)
    Yte = te_apply(fs.values)

    if isinstance(cs_covs, CovarianceModel):
        mbar = cs_projection_matrix(ct.cs, cs_covs)
    else:
        mats = []
        for k in ct.te.orders:
            if k not in cs_covs:
                raise ShapeMismatch(f"missing cross-sectional model for "
                                    f"order {k}")
            mats.append(cs_projection_matrix(ct.cs, cs_covs[k]))
        mbar = np.mean(mats, axis=0)
    return ForecastSet(mbar @ Yte, fs.labels)


def sntz(Yrec, ct: CrossTemporalStructure) -> ForecastSet:
    """Set-negative-to-zero: clamp the reconciled bottom high-frequency
    block at zero and re-aggregate bottom-up.

    The output is non-negative everywhere and exactly coherent; this trades
    unbiasedness for physical plausibility.
    """
    fs = as_forecast_set(Yrec, ct)
    B1 = fs.values[ct.cs.n_a:, ct.te.block_slice(1)]
    out = ct_bottom_up(np.maximum(B1, 0.0), ct)
    out.labels = fs.labels
    return out
