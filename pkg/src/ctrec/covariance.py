"""Covariance approximations for reconciliation.

Every reconciliation step weights the adjustment of base forecasts by a
covariance model of their errors.  This module constructs all supported
approximations, from structure-only diagonals to full shrunk sample
covariances of in-sample one-step-ahead forecast errors, in all three
frameworks: cross-sectional (n x n), temporal ((k*+m) x (k*+m)) and
cross-temporal (n(k*+m) x n(k*+m)).

Estimation conventions (all overridable where it matters):

* residuals are treated as zero-mean forecast errors and are not demeaned;
* sample covariances use the maximum-likelihood denominator (the sample
  count), not N-1;
* residuals are aligned one stacked vector per complete low-frequency
  period; partial periods must be dropped by the caller;
* zero-variance series fail fast (``DegenerateVariance``) instead of being
  silently regularised -- pass ``jitter`` to regularise deliberately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DegenerateVariance,
    DimensionOverflow,
    InsufficientResiduals,
    ShapeMismatch,
    SingularCovariance,
)
from .hierarchy import (
    CrossSectionalStructure,
    CrossTemporalStructure,
    TemporalStructure,
)

__all__ = [
    "ResidualPanel",
    "CovarianceModel",
    "cov_identity",
    "cov_structural",
    "cov_series_variance",
    "cov_sample",
    "cov_shrunk",
    "cov_block_diagonal",
    "cov_kron",
    "per_order_covariance",
    "shrinkage_coefficient",
    "cs_covariance",
    "te_covariance",
    "ct_covariance",
    "CS_KINDS",
    "TE_KINDS",
    "CT_KINDS",
]

_DENSE_CAP = 6000  # largest dimension we allow for dense covariance algebra

CS_KINDS = ("ols", "struc", "wls", "shr", "sam")
TE_KINDS = ("ols", "struc", "wlsv", "shr", "sam")
CT_KINDS = ("ols", "struc", "wlsv", "shr", "sam", "bdshr", "bdsam")


@dataclass(frozen=True)
class ResidualPanel:
    """In-sample one-step-ahead forecast errors.

    ``values[i, t, j]`` is the error of series ``i`` at canonical temporal
    position ``t`` within low-frequency period ``j``.  Each order ``k``
    contributes exactly ``m/k`` positions per period.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ShapeMismatch("residual panel must be (n, k*+m, periods)")
        if not np.isfinite(v).all():
            raise ShapeMismatch("residual panel contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_periods(self) -> int:
        return self.values.shape[2]

    def stacked(self) -> np.ndarray:
        """One row per period, columns in canonical series-major order."""
        n, w, nlf = self.values.shape
        return self.values.reshape(n * w, nlf).T

    def order_samples(self, te: TemporalStructure, k: int) -> np.ndarray:
        """All cross-series sample vectors at order ``k``.

        Returns an (n_periods * m/k, n) matrix; each row is the vector of
        the n series' errors at one temporal position of order ``k``.
        """
        block = self.values[:, te.block_slice(k), :]       # (n, m/k, nlf)
        return block.reshape(self.n, -1).T

    def series_rows(self, i: int) -> np.ndarray:
        """Per-period residual vectors of series ``i`` (n_periods, k*+m)."""
        return self.values[i].T


@dataclass(frozen=True)
class CovarianceModel:
    """A realised covariance approximation.

    Exactly one of ``diag`` (1-d array of diagonal entries), ``dense``
    (full symmetric matrix) or ``sparse_mat`` is set.  ``lam`` records the
    shrinkage coefficient when the model involves shrinkage.
    """

    kind: str
    diag: np.ndarray | None = None
    dense: np.ndarray | None = None
    sparse_mat: sp.spmatrix | None = None
    lam: float | None = None

    def __post_init__(self):
        forms = [f for f in (self.diag, self.dense, self.sparse_mat)
                 if f is not None]
        if len(forms) != 1:
            raise ShapeMismatch("exactly one storage form required")
        if self.diag is not None:
            d = np.asarray(self.diag, dtype=float).ravel()
            object.__setattr__(self, "diag", d)
            if (d <= 0).any():
                raise DegenerateVariance(
                    f"{self.kind}: non-positive variance on the diagonal")
        elif self.dense is not None:
            a = np.asarray(self.dense, dtype=float)
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise ShapeMismatch("dense covariance must be square")
            scale = np.abs(a).max() or 1.0
            if np.abs(a - a.T).max() > 1e-12 * scale:
                raise ShapeMismatch(f"{self.kind}: matrix is not symmetric")
            object.__setattr__(self, "dense", (a + a.T) / 2.0)
            if (np.diag(a) <= 0).any():
                raise DegenerateVariance(
                    f"{self.kind}: non-positive variance on the diagonal")
        else:
            a = self.sparse_mat.tocsr()
            gap = abs(a - a.T)
            scale = np.abs(a.data).max() if a.nnz else 1.0
            if gap.nnz and gap.data.max() > 1e-12 * scale:
                raise ShapeMismatch(f"{self.kind}: matrix is not symmetric")
            if (a.diagonal() <= 0).any():
                raise DegenerateVariance(
                    f"{self.kind}: non-positive variance on the diagonal")
            object.__setattr__(self, "sparse_mat", a)

    @property
    def dim(self) -> int:
        if self.diag is not None:
            return self.diag.size
        if self.dense is not None:
            return self.dense.shape[0]
        return self.sparse_mat.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.diag is not None

    def diagonal(self) -> np.ndarray:
        if self.diag is not None:
            return self.diag.copy()
        if self.dense is not None:
            return np.diag(self.dense).copy()
        return self.sparse_mat.diagonal()

    def toarray(self) -> np.ndarray:
        if self.dim > _DENSE_CAP:
            raise DimensionOverflow(
                f"refusing to densify a {self.dim}-dim covariance")
        if self.diag is not None:
            return np.diag(self.diag)
        if self.dense is not None:
            return self.dense.copy()
        return self.sparse_mat.toarray()

    def matmat(self, X):
        """Covariance times a dense or sparse operand."""
        if self.diag is not None:
            if sp.issparse(X):
                return sp.diags(self.diag) @ X
            X = np.asarray(X)
            return self.diag * X if X.ndim == 1 else self.diag[:, None] * X
        if self.dense is not None:
            Xd = X.toarray() if sp.issparse(X) else np.asarray(X)
            return self.dense @ Xd
        return self.sparse_mat @ X

    def solver(self):
        """Return a function solving ``cov @ x = b`` for dense ``b``."""
        if self.diag is not None:
            inv = 1.0 / self.diag

            def solve(B):
                if sp.issparse(B):
                    return sp.diags(inv) @ B
                B = np.asarray(B)
                return inv * B if B.ndim == 1 else inv[:, None] * B

            return solve
        if self.dense is not None:
            try:
                cho = sla.cho_factor(self.dense)
            except sla.LinAlgError as exc:
                raise SingularCovariance(
                    f"{self.kind}: not positive definite") from exc
            return lambda B: sla.cho_solve(
                cho, B.toarray() if sp.issparse(B) else np.asarray(B))
        try:
            lu = spla.splu(self.sparse_mat.tocsc())
        except RuntimeError as exc:
            raise SingularCovariance(f"{self.kind}: singular") from exc
        return lambda B: lu.solve(
            B.toarray() if sp.issparse(B) else np.asarray(B))


def _with_jitter_diag(d: np.ndarray, kind: str, jitter: float) -> np.ndarray:
    if jitter:
        return d + jitter
    if (d <= 0).any():
        raise DegenerateVariance(
            f"{kind}: zero variance encountered; pass a jitter to "
            f"regularise deliberately")
    return d


# --- constructors ----------------------------------------------------------

def cov_identity(dim: int) -> CovarianceModel:
    """Identity weighting (the OLS choice)."""
    if dim < 1:
        raise ShapeMismatch("dimension must be positive")
    return CovarianceModel("ols", diag=np.ones(dim))


def cov_structural(structure) -> CovarianceModel:
    """Diagonal of summing-matrix row sums.

    Accepts a cross-sectional, temporal or cross-temporal structure and uses
    the row sums of its summing matrix: a series aggregating many leaves
    gets proportionally more variance.
    """
    if not isinstance(structure, (CrossTemporalStructure,
                                  CrossSectionalStructure,
                                  TemporalStructure)):
        raise ShapeMismatch(f"unsupported structure {type(structure)!r}")
    d = np.asarray(structure.summing.sum(axis=1)).ravel()
    return CovarianceModel("struc", diag=d)


def _variance(x: np.ndarray, ddof: int = 0) -> float:
    # zero-mean convention: mean square of the errors
    n = x.size
    if n - ddof <= 0:
        raise InsufficientResiduals("not enough residuals for a variance")
    return float(np.sum(x * x) / (n - ddof))


def cov_series_variance(panel: ResidualPanel, framework: str,
                        te: TemporalStructure, series: int | None = None,
                        ddof: int = 0, jitter: float = 0.0) -> CovarianceModel:
    """Diagonal variance-scaling model (wls / wlsv).

    framework ``"ct"``: one variance per (series, order), repeated across
    the positions of that order's block.  ``"cs"``: per-series variance of
    the high-frequency errors.  ``"te"``: per-order variances of a single
    series (``series`` selects it when the panel holds several).
    """
    if panel.n_periods < 2:
        raise InsufficientResiduals("need at least 2 residual periods")
    if framework == "ct":
        d = np.empty((panel.n, panel.width))
        for k in te.orders:
            cols = te.block_slice(k)
            block = panel.values[:, cols, :]
            v = np.einsum("itj,itj->i", block, block)
            cnt = block.shape[1] * block.shape[2] - ddof
            d[:, cols] = (v / cnt)[:, None]
        return CovarianceModel(
            "wlsv", diag=_with_jitter_diag(d.ravel(), "wlsv", jitter))
    if framework == "cs":
        hf = panel.values[:, te.block_slice(1), :]
        v = np.einsum("itj,itj->i", hf, hf) / (hf.shape[1] * hf.shape[2]
                                               - ddof)
        return CovarianceModel("wls", diag=_with_jitter_diag(v, "wls", jitter))
    if framework == "te":
        i = _pick_series(panel, series)
        d = np.empty(panel.width)
        for k in te.orders:
            cols = te.block_slice(k)
            x = panel.values[i, cols, :]
            d[cols] = _variance(x.ravel(), ddof)
        return CovarianceModel(
            "wlsv", diag=_with_jitter_diag(d, "wlsv", jitter))
    raise ShapeMismatch(f"unknown framework {framework!r}")


def _pick_series(panel: ResidualPanel, series: int | None) -> int:
    if series is None:
        if panel.n != 1:
            raise ShapeMismatch(
                "temporal framework on a multi-series panel needs an "
                "explicit series index")
        return 0
    return int(series)


def _sample_cov(samples: np.ndarray, kind: str, ddof: int,
                jitter: float) -> np.ndarray:
    nobs, dim = samples.shape
    if nobs - ddof <= 0:
        raise InsufficientResiduals("not enough residual periods")
    sigma = samples.T @ samples / (nobs - ddof)
    if jitter:
        sigma = sigma + jitter * np.eye(dim)
    return sigma


def cov_sample(panel: ResidualPanel, framework: str,
               te: TemporalStructure, series: int | None = None,
               ddof: int = 0, jitter: float = 0.0) -> CovarianceModel:
    """Full sample covariance of the stacked residual vectors.

    Requires more sample vectors than dimensions; raises
    ``SingularCovariance`` when the estimate is rank deficient beyond
    ``1e-10 * trace``.
    """
    samples, kind = _framework_samples(panel, framework, te, series)
    nobs, dim = samples.shape
    if nobs <= dim:
        raise SingularCovariance(
            f"{kind}: {nobs} sample vectors cannot identify a "
            f"{dim}-dimensional covariance")
    if dim > _DENSE_CAP:
        raise DimensionOverflow(f"{kind}: dense {dim}-dim covariance "
                                f"exceeds cap {_DENSE_CAP}")
    sigma = _sample_cov(samples, kind, ddof, jitter)
    _check_full_rank(sigma, kind)
    return CovarianceModel(kind, dense=sigma)


def _check_full_rank(sigma: np.ndarray, kind: str) -> None:
    tr = np.trace(sigma)
    if tr <= 0:
        raise SingularCovariance(f"{kind}: zero trace")
    evals = np.linalg.eigvalsh(sigma)
    if evals[0] <= 1e-10 * tr:
        raise SingularCovariance(
            f"{kind}: rank deficient (min eigenvalue {evals[0]:.3e} "
            f"vs trace {tr:.3e})")


def _framework_samples(panel, framework, te, series):
    if framework == "ct":
        return panel.stacked(), "sam"
    if framework == "cs":
        return panel.order_samples(te, 1), "sam"
    if framework == "te":
        return panel.series_rows(_pick_series(panel, series)), "sam"
    raise ShapeMismatch(f"unknown framework {framework!r}")


def shrinkage_coefficient(samples: np.ndarray) -> float:
    """Shrink-to-diagonal coefficient on the correlation scale.

    With standardised residuals ``x`` (columns divided by their root mean
    square) and products ``w_tij = x_ti * x_tj``:

        lam = sum_{i != j} Var(r_ij) / sum_{i != j} r_ij**2,
        Var(r_ij) = N / (N-1)**3 * sum_t (w_tij - mean_t(w))**2,
        r_ij = mean_t(w_tij),

    clamped to [0, 1].  When all off-diagonal correlations vanish the
    coefficient is 1 by convention (full shrinkage changes nothing then).
    """
    x = np.asarray(samples, dtype=float)
    nobs, dim = x.shape
    if nobs < 2:
        raise InsufficientResiduals("shrinkage needs at least 2 periods")
    rms = np.sqrt(np.mean(x * x, axis=0))
    if (rms <= 0).any():
        raise DegenerateVariance("zero-variance column in shrinkage input")
    xs = x / rms
    r = xs.T @ xs / nobs
    wbar = r
    # sum_t (w_tij - wbar_ij)^2 = sum_t w^2 - n*wbar^2, computed columnwise
    w2 = (xs * xs).T @ (xs * xs)
    var_r = (w2 - nobs * wbar**2) * nobs / (nobs - 1) ** 3
    off = ~np.eye(dim, dtype=bool)
    denom = float(np.sum(r[off] ** 2))
    if denom == 0.0:
        return 1.0
    lam = float(np.sum(var_r[off]) / denom)
    return min(1.0, max(0.0, lam))


def cov_shrunk(panel: ResidualPanel, framework: str,
               te: TemporalStructure, series: int | None = None,
               ddof: int = 0, jitter: float = 0.0,
               lambda_override: float | None = None) -> CovarianceModel:
    """Sample covariance shrunk towards its own diagonal.

    The shrinkage weight comes from :func:`shrinkage_coefficient` unless
    overridden.  ``lam = 1`` returns the diagonal, ``lam = 0`` the raw
    sample covariance.
    """
    samples, _ = _framework_samples(panel, framework, te, series)
    if samples.shape[0] < 2:
        raise InsufficientResiduals("need at least 2 residual periods")
    if samples.shape[1] > _DENSE_CAP:
        raise DimensionOverflow("shrunk covariance would be dense beyond cap")
    sigma = _sample_cov(samples, "shr", ddof, jitter)
    lam = shrinkage_coefficient(samples) if lambda_override is None \
        else float(lambda_override)
    if not 0.0 <= lam <= 1.0:
        raise ShapeMismatch(f"shrinkage coefficient {lam} outside [0, 1]")
    shrunk = lam * np.diag(np.diag(sigma)) + (1.0 - lam) * sigma
    return CovarianceModel("shr", dense=shrunk, lam=lam)


def per_order_covariance(panel: ResidualPanel, te: TemporalStructure, k: int,
                         kind: str = "sam", ddof: int = 0,
                         jitter: float = 0.0,
                         lambda_override: float | None = None
                         ) -> CovarianceModel:
    """Cross-series covariance of the residuals at one temporal order.

    ``kind``: ``"wls"`` (diagonal of variances), ``"sam"`` or ``"shr"``.
    """
    samples = panel.order_samples(te, k)
    if samples.shape[0] < 2:
        raise InsufficientResiduals(f"order {k}: need at least 2 samples")
    if kind == "wls":
        v = np.mean(samples * samples, axis=0) * samples.shape[0] \
            / (samples.shape[0] - ddof)
        return CovarianceModel("wls", diag=_with_jitter_diag(v, "wls",
                                                             jitter))
    sigma = _sample_cov(samples, kind, ddof, jitter)
    if kind == "sam":
        if samples.shape[0] <= samples.shape[1]:
            raise SingularCovariance(
                f"order {k}: {samples.shape[0]} samples for "
                f"{samples.shape[1]} series")
        _check_full_rank(sigma, f"sam[k={k}]")
        return CovarianceModel("sam", dense=sigma)
    if kind == "shr":
        lam = shrinkage_coefficient(samples) if lambda_override is None \
            else float(lambda_override)
        shrunk = lam * np.diag(np.diag(sigma)) + (1.0 - lam) * sigma
        return CovarianceModel("shr", dense=shrunk, lam=lam)
    raise ShapeMismatch(f"unknown per-order kind {kind!r}")


def cov_block_diagonal(panel: ResidualPanel, ct: CrossTemporalStructure,
                       shrunk: bool = False, ddof: int = 0,
                       jitter: float = 0.0,
                       lambda_override: float | None = None
                       ) -> CovarianceModel:
    """Block-diagonal cross-covariance scaling (bdshr / bdsam).

    In the time-major arrangement the covariance is block diagonal with one
    n x n cross-series block per temporal order, repeated across that
    order's positions; the result is conjugated by the layout permutation
    into the canonical series-major arrangement.  Shrinkage, when requested,
    is applied per block.
    """
    te = ct.te
    if panel.n_periods < 2:
        raise InsufficientResiduals("need at least 2 residual periods")
    if panel.n > 1 and panel.n != ct.cs.n:
        raise ShapeMismatch(f"panel has {panel.n} series, structure "
                            f"expects {ct.cs.n}")
    kind = "bdshr" if shrunk else "bdsam"
    blocks: dict[int, np.ndarray] = {}
    lams = []
    for k in te.orders:
        sub = per_order_covariance(panel, te, k, "shr" if shrunk else "sam",
                                   ddof, jitter, lambda_override)
        blocks[k] = sub.dense if sub.dense is not None \
            else np.diag(sub.diag)
        if sub.lam is not None:
            lams.append(sub.lam)
    if panel.n == 1:
        # every block is a scalar variance: the model is plain diagonal
        d = np.empty(panel.width)
        for k in te.orders:
            d[te.block_slice(k)] = blocks[k][0, 0]
        return CovarianceModel(kind, diag=d,
                               lam=float(np.mean(lams)) if lams else None)
    order_per_col = te.order_of_column()
    W = sp.block_diag([blocks[int(k)] for k in order_per_col],
                      format="coo")
    inv = np.argsort(ct.perm)
    sigma = sp.coo_matrix((W.data, (inv[W.row], inv[W.col])),
                          shape=W.shape).tocsr()
    return CovarianceModel(kind, sparse_mat=sigma,
                           lam=float(np.mean(lams)) if lams else None)


def cov_kron(W: CovarianceModel, Omega: CovarianceModel,
             ct: CrossTemporalStructure | None = None) -> CovarianceModel:
    """Kronecker product model ``W (x) Omega`` (series by temporal)."""
    if ct is not None:
        if W.dim != ct.cs.n or Omega.dim != ct.te.width:
            raise ShapeMismatch(
                f"kron factors {W.dim}x{Omega.dim} do not match structure "
                f"{ct.cs.n}x{ct.te.width}")
    kind = f"kron({W.kind},{Omega.kind})"
    if W.is_diagonal and Omega.is_diagonal:
        return CovarianceModel(kind, diag=np.kron(W.diag, Omega.diag))
    dim = W.dim * Omega.dim
    if dim > _DENSE_CAP:
        raise DimensionOverflow(f"dense Kronecker model of dim {dim} "
                                f"exceeds cap {_DENSE_CAP}")
    return CovarianceModel(kind, dense=np.kron(W.toarray(), Omega.toarray()))


# --- kind dispatch ----------------------------------------------------------

def cs_covariance(kind: str, cs: CrossSectionalStructure,
                  panel: ResidualPanel | None = None,
                  te: TemporalStructure | None = None, k: int = 1,
                  jitter: float = 0.0,
                  lambda_override: float | None = None) -> CovarianceModel:
    """Cross-sectional covariance by name; data kinds use order ``k``."""
    if kind == "ols":
        return cov_identity(cs.n)
    if kind == "struc":
        return cov_structural(cs)
    if kind not in CS_KINDS:
        raise ShapeMismatch(f"unknown cross-sectional kind {kind!r}")
    if panel is None or te is None:
        raise InsufficientResiduals(
            f"cross-sectional kind {kind!r} needs a residual panel")
    if kind == "wls":
        return per_order_covariance(panel, te, k, "wls", jitter=jitter)
    return per_order_covariance(panel, te, k, kind, jitter=jitter,
                                lambda_override=lambda_override)


def te_covariance(kind: str, te: TemporalStructure,
                  panel: ResidualPanel | None = None,
                  series: int | None = None, jitter: float = 0.0,
                  lambda_override: float | None = None) -> CovarianceModel:
    """Temporal covariance by name for one series."""
    if kind == "ols":
        return cov_identity(te.width)
    if kind == "struc":
        return cov_structural(te)
    if kind not in TE_KINDS:
        raise ShapeMismatch(f"unknown temporal kind {kind!r}")
    if panel is None:
        raise InsufficientResiduals(
            f"temporal kind {kind!r} needs a residual panel")
    if kind == "wlsv":
        return cov_series_variance(panel, "te", te, series, jitter=jitter)
    if kind == "sam":
        return cov_sample(panel, "te", te, series, jitter=jitter)
    return cov_shrunk(panel, "te", te, series, jitter=jitter,
                      lambda_override=lambda_override)


def ct_covariance(kind: str, ct: CrossTemporalStructure,
                  panel: ResidualPanel | None = None, jitter: float = 0.0,
                  lambda_override: float | None = None) -> CovarianceModel:
    """Cross-temporal covariance by name."""
    if kind == "ols":
        return cov_identity(ct.dim)
    if kind == "struc":
        return cov_structural(ct)
    if kind not in CT_KINDS:
        raise ShapeMismatch(f"unknown cross-temporal kind {kind!r}")
    if panel is None:
        raise InsufficientResiduals(
            f"cross-temporal kind {kind!r} needs a residual panel")
    if kind == "wlsv":
        return cov_series_variance(panel, "ct", ct.te, jitter=jitter)
    if kind == "sam":
        return cov_sample(panel, "ct", ct.te, jitter=jitter)
    if kind == "shr":
        return cov_shrunk(panel, "ct", ct.te, jitter=jitter,
                          lambda_override=lambda_override)
    return cov_block_diagonal(panel, ct, shrunk=(kind == "bdshr"),
                              jitter=jitter, lambda_override=lambda_override)
