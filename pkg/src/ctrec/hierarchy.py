"""Structural matrices for cross-sectional, temporal and cross-temporal
hierarchies.

All structures are immutable after construction and hold their matrices in
compressed sparse form, so they can be shared freely across concurrent
reconciliation jobs.  The cross-temporal summing matrix is never densified;
at the scale of a few hundred series and daily/hourly granularities its dense
counterpart would run to gigabytes.

Layout convention (used by every operation and file format in the package):
columns of a forecast matrix are grouped by aggregation order from the
largest order ``m`` down to 1, with ``m/k`` chronologically ordered columns
per order.  The canonical vectorisation stacks the matrix row by row
(series-major), so series 1 contributes its order-``m`` value first and its
order-1 values last.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    CtrecError,
    DimensionOverflow,
    EmptyHierarchy,
    NonDivisor,
    SchemaError,
    ShapeMismatch,
    ZeroRow,
)

__all__ = [
    "CrossSectionalStructure",
    "TemporalStructure",
    "CrossTemporalStructure",
    "ForecastSet",
    "build_cross_sectional",
    "build_temporal",
    "build_cross_temporal",
    "coherence_residuals",
    "read_hierarchy_file",
    "write_hierarchy_file",
]


def _csr(a) -> sp.csr_matrix:
    return sp.csr_matrix(a)


@dataclass(frozen=True)
class CrossSectionalStructure:
    """A spatial hierarchy of ``n_a`` aggregate and ``n_b`` bottom series.

    Attributes
    ----------
    agg : csr_matrix
        (n_a, n_b) aggregation weights; row i expresses upper series i as a
        weighted sum of the bottom series.  0/1 for strict hierarchies,
        arbitrary non-negative weights are accepted.
    summing : csr_matrix
        (n, n_b) map from bottom values to all series: ``[agg; I]``.
    constraints : csr_matrix
        (n_a, n) zero-constraint matrix ``[I, -agg]``; coherent vectors are
        exactly its null space, and ``constraints @ summing == 0``.
    """

    agg: sp.csr_matrix
    summing: sp.csr_matrix
    constraints: sp.csr_matrix
    upper_labels: tuple[str, ...]
    bottom_labels: tuple[str, ...]

    @property
    def n_a(self) -> int:
        return self.agg.shape[0]

    @property
    def n_b(self) -> int:
        return self.agg.shape[1]

    @property
    def n(self) -> int:
        return self.n_a + self.n_b

    @property
    def labels(self) -> tuple[str, ...]:
        return self.upper_labels + self.bottom_labels


def build_cross_sectional(agg_matrix, upper_labels=None,
                          bottom_labels=None) -> CrossSectionalStructure:
    """Build a cross-sectional structure from its aggregation matrix.

    Parameters
    ----------
    agg_matrix : array_like or sparse, shape (n_a, n_b)
        One row per upper series with the weights of the bottom series it
        aggregates.  Must not contain an all-zero row.

    Raises
    ------
    EmptyHierarchy
        If there are no upper or no bottom series.
    ZeroRow
        If some upper series aggregates nothing.
    """
    C = _csr(np.atleast_2d(np.asarray(agg_matrix, dtype=float))
             if not sp.issparse(agg_matrix) else agg_matrix.astype(float))
    n_a, n_b = C.shape
    if n_a == 0 or n_b == 0:
        raise EmptyHierarchy(f"need at least one upper and one bottom series, "
                             f"got n_a={n_a}, n_b={n_b}")
    row_nnz = np.diff(C.tocsr().indptr)
    if (row_nnz == 0).any():
        bad = int(np.flatnonzero(row_nnz == 0)[0])
        raise ZeroRow(f"upper series {bad} aggregates nothing")

    S = sp.vstack([C, sp.eye(n_b, format="csr")]).tocsr()
    U_t = sp.hstack([sp.eye(n_a, format="csr"), -C]).tocsr()

    if upper_labels is None:
        upper_labels = tuple(f"u{i + 1}" for i in range(n_a))
    if bottom_labels is None:
        bottom_labels = tuple(f"b{i + 1}" for i in range(n_b))
    if len(upper_labels) != n_a or len(bottom_labels) != n_b:
        raise ShapeMismatch("label count does not match series count")
    return CrossSectionalStructure(C, S, U_t,
                                   tuple(upper_labels), tuple(bottom_labels))


@dataclass(frozen=True)
class TemporalStructure:
    """Temporal aggregation over a set of orders dividing ``m``.

    ``orders`` is kept in decreasing order (``m`` first, 1 last), matching
    the canonical column layout.  ``k_star`` counts the aggregated columns,
    so a full forecast row has ``k_star + m`` entries.

    Attributes
    ----------
    agg : csr_matrix
        (k_star, m) temporal aggregation map (one block of row sums per
        order above 1).
    summing : csr_matrix
        (k_star + m, m) map from the high-frequency values of one
        low-frequency period to all orders: ``[agg; I]``.
    constraints : csr_matrix
        (k_star, k_star + m) zero-constraint matrix ``[I, -agg]``.
    """

    m: int
    orders: tuple[int, ...]
    agg: sp.csr_matrix
    summing: sp.csr_matrix
    constraints: sp.csr_matrix
    _offsets: dict[int, int] = field(repr=False, default_factory=dict)

    @property
    def p(self) -> int:
        return len(self.orders)

    @property
    def k_star(self) -> int:
        return self.agg.shape[0]

    @property
    def width(self) -> int:
        return self.k_star + self.m

    def block_slice(self, k: int) -> slice:
        """Column slice of order ``k`` in the canonical layout."""
        if k not in self._offsets:
            raise ShapeMismatch(f"order {k} not in {self.orders}")
        start = self._offsets[k]
        return slice(start, start + self.m // k)

    def order_of_column(self) -> np.ndarray:
        """Order ``k`` owning each canonical column, as an int array."""
        out = np.empty(self.width, dtype=int)
        for k in self.orders:
            out[self.block_slice(k)] = k
        return out

    def aggregate(self, hf: np.ndarray) -> np.ndarray:
        """Aggregate high-frequency values of one low-frequency period into
        the canonical layout.

        ``hf`` has shape (..., m); the result has shape (..., k_star + m).
        """
        hf = np.asarray(hf, dtype=float)
        if hf.shape[-1] != self.m:
            raise ShapeMismatch(f"expected {self.m} high-frequency values, "
                                f"got {hf.shape[-1]}")
        if hf.ndim == 1:
            return self.summing @ hf
        return np.asarray((self.summing @ hf.T).T)


def build_temporal(m: int, orders=None) -> TemporalStructure:
    """Build a temporal structure for top order ``m``.

    ``orders`` defaults to every divisor of ``m``.  1 and ``m`` are always
    included.  Raises ``NonDivisor`` if some requested order does not
    divide ``m``.
    """
    if m < 1:
        raise NonDivisor(f"top order must be positive, got {m}")
    if orders is None:
        ks = {k for k in range(1, m + 1) if m % k == 0}
    else:
        ks = {int(k) for k in orders} | {1, m}
        for k in sorted(ks):
            if k < 1 or m % k != 0:
                raise NonDivisor(f"order {k} does not divide m={m}")
    ordered = tuple(sorted(ks, reverse=True))

    blocks = [sp.kron(sp.eye(m // k, format="csr"),
                      np.ones((1, k)), format="csr")
              for k in ordered if k > 1]
    K = sp.vstack(blocks).tocsr() if blocks else sp.csr_matrix((0, m))
    k_star = K.shape[0]
    R = sp.vstack([K, sp.eye(m, format="csr")]).tocsr()
    Z_t = sp.hstack([sp.eye(k_star, format="csr"), -K]).tocsr() \
        if k_star else sp.csr_matrix((0, m))

    offsets, pos = {}, 0
    for k in ordered:
        offsets[k] = pos
        pos += m // k
    return TemporalStructure(m, ordered, K, R, Z_t, offsets)


@dataclass(frozen=True)
class CrossTemporalStructure:
    """Combined structure: spatial hierarchy x temporal aggregation.

    Attributes
    ----------
    summing : csr_matrix
        (n*(k_star+m), m*n_b) cross-temporal summing matrix, the Kronecker
        product of the two summing matrices.  Its column space is the
        coherent subspace.
    perm : ndarray
        Permutation taking the time-major stacking (column-major vec of the
        forecast matrix) to the canonical series-major stacking:
        ``vec_series = vec_time[perm]``.
    perm_matrix : csr_matrix
        The same permutation as a matrix ``P`` with ``P @ vec_time ==
        vec_series`` and ``P @ P.T == I``.
    hf_cross_constraints : csr_matrix
        (n_a*m, dim) cross-sectional constraints on the high-frequency
        block; together with per-series temporal coherence these pin the
        whole coherent subspace.
    constraints : csr_matrix
        Full-row-rank zero-constraint matrix (n_a*m + n*k_star, dim)
        stacking ``hf_cross_constraints`` over per-series temporal
        constraints.  ``constraints @ summing == 0`` exactly.
    """

    cs: CrossSectionalStructure
    te: TemporalStructure
    summing: sp.csr_matrix
    perm: np.ndarray
    perm_matrix: sp.csr_matrix
    hf_cross_constraints: sp.csr_matrix
    constraints: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.cs.n * self.te.width

    @property
    def n_constraints(self) -> int:
        return self.constraints.shape[0]


def build_cross_temporal(cs: CrossSectionalStructure, te: TemporalStructure,
                         max_dim: int = 5_000_000) -> CrossTemporalStructure:
    """Assemble the cross-temporal structure and verify its kernel identity.

    Raises ``DimensionOverflow`` when ``n*(k_star+m)`` exceeds ``max_dim``.
    """
    n, q = cs.n, te.width
    dim = n * q
    if dim > max_dim:
        raise DimensionOverflow(f"n*(k*+m) = {dim} exceeds cap {max_dim}")

    F = sp.kron(cs.summing, te.summing, format="csr")

    rows = np.arange(dim)
    perm = (rows % q) * n + rows // q  # vec_series[i*q+t] = vec_time[t*n+i]
    P = sp.csr_matrix((np.ones(dim), (rows, perm)), shape=(dim, dim))

    zero_block = sp.csr_matrix((cs.n_a * te.m, n * te.k_star))
    hf_cs = sp.hstack([zero_block,
                       sp.kron(sp.eye(te.m, format="csr"), cs.constraints,
                               format="csr")]).tocsr() @ P.T
    per_series_te = sp.kron(sp.eye(n, format="csr"), te.constraints,
                            format="csr")
    H_t = sp.vstack([hf_cs, per_series_te]).tocsr()

    check = H_t @ F
    check.eliminate_zeros()
    if check.nnz and np.abs(check.data).max() > 0:
        raise CtrecError("internal error: constraint matrix does not "
                         "annihilate the coherent subspace")
    return CrossTemporalStructure(cs, te, F, perm, P.tocsr(), hf_cs.tocsr(),
                                  H_t)


@dataclass
class ForecastSet:
    """An ``n x (k_star+m)`` matrix of forecasts in the canonical layout.

    Rows are series (aggregates first), columns follow the block layout of
    the associated :class:`TemporalStructure`.
    """

    values: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ShapeMismatch("forecast values must be a 2-d matrix")
        if self.labels is not None:
            self.labels = tuple(self.labels)
            if len(self.labels) != self.values.shape[0]:
                raise ShapeMismatch("one label per series required")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def vec(self) -> np.ndarray:
        """Canonical series-major vectorisation."""
        return self.values.ravel()

    @classmethod
    def from_vec(cls, v, n: int, width: int, labels=None) -> "ForecastSet":
        v = np.asarray(v, dtype=float)
        if v.size != n * width:
            raise ShapeMismatch(f"vector of length {v.size} cannot fill a "
                                f"{n}x{width} forecast matrix")
        return cls(v.reshape(n, width).copy(), labels)

    def copy(self) -> "ForecastSet":
        return ForecastSet(self.values.copy(), self.labels)


def as_forecast_set(Y, ct: CrossTemporalStructure) -> ForecastSet:
    """Coerce an array to a ForecastSet and validate its shape."""
    fs = Y if isinstance(Y, ForecastSet) else ForecastSet(np.asarray(Y))
    if fs.values.shape != (ct.cs.n, ct.te.width):
        raise ShapeMismatch(f"expected {(ct.cs.n, ct.te.width)} forecasts, "
                            f"got {fs.values.shape}")
    return fs


def coherence_residuals(Y, ct: CrossTemporalStructure):
    """Raw coherence residual matrices of a forecast set.

    Returns the pair ``(cross_sectional, temporal)`` where the first is the
    (n_a, k_star+m) matrix of aggregation residuals at every temporal
    position and the second the (k_star, n) matrix of per-series temporal
    residuals.  Norms are left to the caller.
    """
    fs = as_forecast_set(Y, ct)
    cs_res = ct.cs.constraints @ fs.values
    te_res = ct.te.constraints @ fs.values.T if ct.te.k_star \
        else np.zeros((0, ct.cs.n))
    return np.asarray(cs_res), np.asarray(te_res)


# --- hierarchy file -------------------------------------------------------
#
# Plain-text format: a header line "n_a n_b", then one line per upper series
# "<label>: <w_1> ... <w_{n_b}>" giving a row of aggregation weights.  An
# optional final line "bottom: <label_1> ... <label_{n_b}>" names the bottom
# series; without it they are auto-named b1, b2, ...

def read_hierarchy_file(path) -> CrossSectionalStructure:
    """Parse a hierarchy file; errors carry 1-based line numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.readlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw)
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise SchemaError(f"{path}: empty hierarchy file")

    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 2:
        raise SchemaError(f"{path}:{lineno}: header must be 'n_a n_b'")
    try:
        n_a, n_b = int(parts[0]), int(parts[1])
    except ValueError:
        raise SchemaError(f"{path}:{lineno}: header must be two integers")
    body = lines[1:]
    bottom_labels = None
    if len(body) == n_a + 1 \
            and body[-1][1].split(":", 1)[0].strip() == "bottom":
        lineno, ln = body[-1]
        tokens = ln.partition(":")[2].split()
        if len(tokens) != n_b:
            raise SchemaError(f"{path}:{lineno}: expected {n_b} bottom "
                              f"labels, got {len(tokens)}")
        bottom_labels = tuple(tokens)
        body = body[:-1]
    if len(body) != n_a:
        raise SchemaError(f"{path}: expected {n_a} aggregation rows, "
                          f"found {len(body)}")

    labels, rows = [], []
    for lineno, ln in body:
        if ":" not in ln:
            raise SchemaError(f"{path}:{lineno}: missing ':' separator")
        label, _, rest = ln.partition(":")
        try:
            weights = [float(tok) for tok in rest.split()]
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: non-numeric weight")
        if len(weights) != n_b:
            raise SchemaError(f"{path}:{lineno}: expected {n_b} weights, "
                              f"got {len(weights)}")
        labels.append(label.strip())
        rows.append(weights)
    try:
        return build_cross_sectional(np.array(rows), tuple(labels),
                                     bottom_labels)
    except (EmptyHierarchy, ZeroRow) as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def write_hierarchy_file(path, cs: CrossSectionalStructure) -> None:
    dense = cs.agg.toarray()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{cs.n_a} {cs.n_b}\n")
        for label, row in zip(cs.upper_labels, dense):
            fh.write(f"{label}: " + " ".join(f"{w:g}" for w in row) + "\n")
        fh.write("bottom: " + " ".join(cs.bottom_labels) + "\n")
