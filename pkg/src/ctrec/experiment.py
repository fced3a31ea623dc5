"""Rolling-origin forecasting harness.

A fixed-length training window slides forward one low-frequency period per
replication; base forecasts for the evaluation period are generated (or
ingested from files), reconciled by every configured approach, and scored
against the aggregated actuals.  Scoring covers one aligned low-frequency
period (the "operating day"), so a cell at order k accumulates
``replications * m/k`` forecast/actual pairs.

Randomness only enters through the synthetic panel generator; given the
same configuration, data and seed, every report is reproduced exactly.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .approaches import apply_approach, parse_approach, split_approaches
from .covariance import ResidualPanel
from .errors import (
    BadPartition,
    ConfigError,
    CtrecError,
    InsufficientHistory,
    InsufficientResiduals,
    MissingCell,
    SchemaError,
    ShapeMismatch,
    ZeroMeanActuals,
)
from .evaluate import (
    AccuracyReport,
    MCBReport,
    NegativityRow,
    gross_discrepancies,
    mcb_nemenyi,
    negativity_audit,
)
from .hierarchy import (
    CrossSectionalStructure,
    CrossTemporalStructure,
    ForecastSet,
    TemporalStructure,
    build_cross_sectional,
)
from .reconcile import ct_bottom_up, sntz

__all__ = [
    "ExperimentConfig",
    "SeriesPanel",
    "ExperimentResult",
    "parse_config_text",
    "config_from_mapping",
    "synth_pv_panel",
    "persistence_base",
    "pers_bu_benchmark",
    "naive_base",
    "residual_panel_from_window",
    "ingest_base_forecasts",
    "write_base_forecasts",
    "run_experiment",
    "write_discrepancy_csv",
    "write_negativity_csv",
]

BASE_KINDS = ("snaive", "mean", "smooth")
_SMOOTH_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class ExperimentConfig:
    """Rolling-origin experiment settings.

    ``evaluation_slice`` is the 1-based inclusive range of high-frequency
    horizon steps that are scored; it must cover exactly one aligned
    low-frequency period (temporal aggregation of the scores happens within
    that period).
    """

    m: int
    orders: tuple[int, ...]
    window_length: int
    horizon: int
    evaluation_slice: tuple[int, int]
    replications: int
    approaches: tuple[str, ...]
    reference: str = "persbu"
    base: str = "smooth"
    delta: float | None = None
    norm: str = "linf"
    alpha: float = 0.05
    jitter: float = 0.0
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.window_length <= 0 or self.window_length % self.m:
            raise ConfigError("window_length must be a positive multiple "
                              "of m")
        if self.horizon <= 0 or self.horizon % self.m:
            raise ConfigError("horizon must be a positive multiple of m")
        lo, hi = self.evaluation_slice
        if not (1 <= lo <= hi <= self.horizon):
            raise ConfigError(f"evaluation_slice {lo}..{hi} outside "
                              f"1..{self.horizon}")
        if hi - lo + 1 != self.m or (lo - 1) % self.m:
            raise ConfigError("evaluation_slice must cover exactly one "
                              "aligned low-frequency period")
        if self.replications < 1:
            raise ConfigError("need at least one replication")
        if not self.approaches:
            raise ConfigError("no approaches configured")
        if self.base not in BASE_KINDS:
            raise ConfigError(f"base must be one of {BASE_KINDS}")
        if self.norm not in ("l1", "linf"):
            raise ConfigError("norm must be l1 or linf")

    @property
    def eval_day(self) -> int:
        """1-based index of the scored low-frequency period."""
        return (self.evaluation_slice[0] - 1) // self.m + 1


_CONFIG_KEYS = {
    "m", "orders", "window_length", "horizon", "evaluation_slice",
    "replications", "approaches", "reference", "base", "delta", "norm",
    "alpha", "jitter", "seed", "jobs",
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _parse_slice(text: str) -> tuple[int, int]:
    for sep in ("..", "-", ":"):
        if sep in text:
            a, _, b = text.partition(sep)
            return int(a), int(b)
    raise ConfigError(f"cannot parse evaluation_slice {text!r}")


def config_from_mapping(raw: dict[str, str], **overrides) -> ExperimentConfig:
    """Build a config from parsed text values plus keyword overrides."""
    vals: dict = dict(raw)
    vals.update({k: v for k, v in overrides.items() if v is not None})
    try:
        m = int(vals["m"])
        raw_orders = vals.get("orders", "")
        if isinstance(raw_orders, (tuple, list)):
            orders = tuple(int(k) for k in raw_orders)
        else:
            orders = tuple(int(tok) for tok in str(raw_orders).split(",")
                           if tok.strip())
        orders = orders or tuple(k for k in range(m, 0, -1) if m % k == 0)
        window_length = int(vals.get("window_length", 14 * m))
        horizon = int(vals.get("horizon", 2 * m))
        if "evaluation_slice" in vals:
            ev = vals["evaluation_slice"]
            slice_ = ev if isinstance(ev, tuple) else _parse_slice(str(ev))
        else:
            slice_ = (horizon - m + 1, horizon)
        replications = int(vals.get("replications", 1))
        approaches = vals.get("approaches", ())
        if isinstance(approaches, str):
            approaches = tuple(split_approaches(approaches))
        delta = vals.get("delta")
        delta = float(delta) if delta not in (None, "", "auto") else None
        return ExperimentConfig(
            m=m, orders=orders, window_length=window_length, horizon=horizon,
            evaluation_slice=tuple(slice_), replications=replications,
            approaches=tuple(approaches),
            reference=str(vals.get("reference", "persbu")),
            base=str(vals.get("base", "smooth")),
            delta=delta,
            norm=str(vals.get("norm", "linf")),
            alpha=float(vals.get("alpha", 0.05)),
            jitter=float(vals.get("jitter", 0.0)),
            seed=int(vals.get("seed", 0)),
            jobs=int(vals.get("jobs", 1)))
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


@dataclass
class SeriesPanel:
    """High-frequency actuals for every node of the hierarchy."""

    observations: np.ndarray
    labels: tuple[str, ...]
    levels: tuple[str, ...]

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=float)
        if self.observations.ndim != 2:
            raise ShapeMismatch("panel must be (series, time)")
        self.labels = tuple(self.labels)
        self.levels = tuple(self.levels)
        if len(self.labels) != self.observations.shape[0] \
                or len(self.levels) != len(self.labels):
            raise ShapeMismatch("one label and level per series required")

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def length(self) -> int:
        return self.observations.shape[1]

    @classmethod
    def from_bottom(cls, bottom, cs: CrossSectionalStructure,
                    levels=None) -> "SeriesPanel":
        """Derive the aggregate rows from bottom observations."""
        bottom = np.asarray(bottom, dtype=float)
        if bottom.shape[0] != cs.n_b:
            raise ShapeMismatch(f"expected {cs.n_b} bottom series")
        obs = np.vstack([np.asarray(cs.agg @ bottom), bottom])
        if levels is None:
            levels = ("upper",) * cs.n_a + ("bottom",) * cs.n_b
        return cls(obs, cs.labels, levels)

    @classmethod
    def from_csv(cls, path, cs: CrossSectionalStructure) -> "SeriesPanel":
        """Load a `series,timestamp,value` panel.

        The file may carry all ``n`` series (matched to the structure by
        label) or only the ``n_b`` bottom series, in which case the upper
        rows are derived by aggregation.
        """
        data: dict[str, dict[int, float]] = {}
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header] != \
                    ["series", "timestamp", "value"]:
                raise SchemaError(f"{path}: expected header "
                                  f"'series,timestamp,value'")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise SchemaError(f"{path}:{lineno}: expected 3 fields")
                try:
                    t, v = int(row[1]), float(row[2])
                except ValueError:
                    raise SchemaError(f"{path}:{lineno}: bad timestamp or "
                                      f"value")
                series = data.setdefault(row[0].strip(), {})
                if t in series:
                    raise SchemaError(f"{path}:{lineno}: duplicate "
                                      f"timestamp {t} for {row[0]!r}")
                series[t] = v
        if not data:
            raise SchemaError(f"{path}: empty panel")
        lengths = {len(v) for v in data.values()}
        if len(lengths) != 1:
            raise SchemaError(f"{path}: series have differing lengths")
        T = lengths.pop()
        for label, series in data.items():
            if sorted(series) != list(range(T)):
                raise SchemaError(f"{path}: series {label!r} timestamps "
                                  f"must be 0..{T - 1}")

        def row_of(label):
            return np.array([data[label][t] for t in range(T)])

        names = set(data)
        if names == set(cs.labels):
            obs = np.vstack([row_of(lb) for lb in cs.labels])
            levels = ("upper",) * cs.n_a + ("bottom",) * cs.n_b
            return cls(obs, cs.labels, levels)
        if names == set(cs.bottom_labels):
            bottom = np.vstack([row_of(lb) for lb in cs.bottom_labels])
            return cls.from_bottom(bottom, cs)
        unknown = sorted(names - set(cs.labels))[:5]
        raise SchemaError(f"{path}: series labels do not match the "
                          f"hierarchy (e.g. {unknown})")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["series", "timestamp", "value"])
            for i, label in enumerate(self.labels):
                for t in range(self.length):
                    w.writerow([label, t,
                                repr(float(self.observations[i, t]))])


def synth_pv_panel(n_b: int, zones, days: int, seed: int, m: int = 24,
                   cloud: float = 0.25
                   ) -> tuple[SeriesPanel, CrossSectionalStructure]:
    """Deterministic synthetic plant panel with a two-level hierarchy.

    Bottom series are clipped diurnal sinusoids scaled by a per-plant
    capacity and, when ``cloud > 0``, damped by smooth multiplicative
    noise; they are zero at night.  Zone rows sum their member plants and a
    total row sums everything.  ``cloud = 0`` yields an exactly periodic
    panel.
    """
    zones = tuple(int(z) for z in zones)
    if not zones or any(z <= 0 for z in zones) or sum(zones) != n_b:
        raise BadPartition(f"zones {zones} do not partition {n_b} plants")
    if not 0.0 <= cloud < 1.0:
        raise ConfigError("cloud must lie in [0, 1)")
    rows = [np.ones(n_b)]
    off = 0
    for z in zones:
        row = np.zeros(n_b)
        row[off:off + z] = 1.0
        rows.append(row)
        off += z
    labels = ("tot",) + tuple(f"z{i + 1}" for i in range(len(zones)))
    cs = build_cross_sectional(
        np.array(rows), labels,
        tuple(f"p{i + 1:03d}" for i in range(n_b)))

    rng = np.random.default_rng(seed)
    T = days * m
    pos = np.arange(T) % m
    phase = (pos - m / 4.0) / (m / 2.0)
    shape = np.maximum(np.sin(np.pi * phase), 0.0) ** 1.3
    capacity = rng.uniform(0.5, 2.0, n_b)
    bottom = capacity[:, None] * shape[None, :]
    if cloud > 0.0:
        rough = rng.uniform(0.0, 1.0, (n_b, T))
        win = max(3, m // 4)
        kernel = np.ones(win) / win
        smooth = np.vstack([
            np.convolve(r, kernel, mode="same") for r in rough])
        bottom = bottom * (1.0 - cloud * smooth)
    levels = ("L0",) + ("L1",) * len(zones) + ("L2",) * n_b
    return SeriesPanel.from_bottom(bottom, cs, levels), cs


def persistence_base(panel: SeriesPanel, origin: int, horizon: int,
                     lag: int = 48) -> np.ndarray:
    """Persistence forecasts: repeat the observation one lag cycle back.

    Step ``h`` (1-based) forecasts time ``origin + h - 1`` with the value
    observed at ``origin + h - 1 - lag``.
    """
    if horizon < 1:
        raise ShapeMismatch("horizon must be positive")
    if horizon > lag:
        raise InsufficientHistory(f"persistence with lag {lag} cannot reach "
                                  f"horizon {horizon}")
    if origin - lag < 0:
        raise InsufficientHistory(f"origin {origin} has no observation "
                                  f"{lag} steps back")
    idx = origin + np.arange(horizon) - lag
    return panel.observations[:, idx].copy()


def pers_bu_benchmark(panel: SeriesPanel, origin: int,
                      ct: CrossTemporalStructure, day: int = 2,
                      lag: int | None = None) -> ForecastSet:
    """Bottom-up aggregation of per-plant persistence forecasts.

    Always non-negative for non-negative panels and exactly coherent.
    """
    m = ct.te.m
    lag = 2 * m if lag is None else lag
    pf = persistence_base(panel, origin, day * m, lag)
    B1 = pf[ct.cs.n_a:, (day - 1) * m: day * m]
    out = ct_bottom_up(B1, ct)
    out.labels = panel.labels
    return out


def _aggregate_window(window: np.ndarray, k: int) -> np.ndarray:
    n, W = window.shape
    return window.reshape(n, W // k, k).sum(axis=2)


def _one_step_and_forecast(xk: np.ndarray, kind: str, season: int):
    """In-sample one-step fits and the next-period forecast of one order.

    Returns ``(fitted, forecast)`` where ``fitted`` matches ``xk`` with NaN
    before the method is defined, and ``forecast`` is the (n, season) block
    for any future low-frequency period.
    """
    n, steps = xk.shape
    periods = steps // season
    if kind == "snaive":
        if steps <= season:
            raise InsufficientHistory("seasonal naive needs one full cycle")
        fitted = np.full_like(xk, np.nan)
        fitted[:, season:] = xk[:, :-season]
        return fitted, xk[:, -season:].copy()
    if kind == "mean":
        fitted = np.full_like(xk, np.nan)
        csum = np.cumsum(xk, axis=1)
        counts = np.arange(1, steps)
        fitted[:, 1:] = csum[:, :-1] / counts
        forecast = np.repeat(xk.mean(axis=1)[:, None], season, axis=1)
        return fitted, forecast
    if kind == "smooth":
        if periods < 2:
            raise InsufficientHistory("smoothing needs two full cycles")
        sub = xk.reshape(n, periods, season)
        best_sse = np.full(n, np.inf)
        best_fit = np.full((n, periods, season), np.nan)
        best_level = np.empty((n, season))
        for alpha in _SMOOTH_GRID:
            level = sub[:, 0, :].copy()
            fit = np.full((n, periods, season), np.nan)
            sse = np.zeros(n)
            for t in range(1, periods):
                fit[:, t, :] = level
                err = sub[:, t, :] - level
                sse += np.sum(err * err, axis=1)
                level = alpha * sub[:, t, :] + (1.0 - alpha) * level
            better = sse < best_sse
            best_sse[better] = sse[better]
            best_fit[better] = fit[better]
            best_level[better] = level[better]
        return best_fit.reshape(n, steps), best_level
    raise ConfigError(f"unknown base kind {kind!r}")


def naive_base(panel: SeriesPanel, origin: int, te: TemporalStructure,
               kind: str, window_length: int | None = None,
               day: int = 2) -> ForecastSet:
    """Generate base forecasts for the evaluation period at every order.

    Each (series, order) is forecast from its own temporally aggregated
    training window.  The seasonal-naive and window-mean kinds are simple
    references; the ``smooth`` kind fits a per-phase exponentially weighted
    mean with a per-(series, order) smoothing weight, which -- like real
    base forecasts produced by independent models -- is incoherent across
    orders and series.
    """
    m = te.m
    W = origin if window_length is None else int(window_length)
    if W <= 0 or W % m:
        raise InsufficientHistory("window must be a positive multiple of m")
    if W > origin:
        raise InsufficientHistory(f"window {W} exceeds history {origin}")
    if day < 1:
        raise ShapeMismatch("day must be >= 1")
    window = panel.observations[:, origin - W: origin]
    values = np.empty((panel.n, te.width))
    for k in te.orders:
        xk = _aggregate_window(window, k)
        _, forecast = _one_step_and_forecast(xk, kind, m // k)
        values[:, te.block_slice(k)] = forecast
    return ForecastSet(values, panel.labels)


def residual_panel_from_window(panel: SeriesPanel, origin: int,
                               te: TemporalStructure, kind: str,
                               window_length: int | None = None
                               ) -> ResidualPanel:
    """One-step-ahead in-sample errors aligned per low-frequency period.

    The first period of the window is dropped (every method needs one
    period of warm-up), leaving ``window/m - 1`` complete residual periods.
    """
    m = te.m
    W = origin if window_length is None else int(window_length)
    if W <= 0 or W % m:
        raise InsufficientResiduals("window must be a positive multiple "
                                    "of m")
    if W > origin:
        raise InsufficientResiduals(f"window {W} exceeds history {origin}")
    n_lf = W // m - 1
    if n_lf < 2:
        raise InsufficientResiduals(
            f"window of {W // m} periods leaves {n_lf} residual periods; "
            f"need at least 2 (window >= 3m)")
    window = panel.observations[:, origin - W: origin]
    res = np.empty((panel.n, te.width, n_lf))
    for k in te.orders:
        xk = _aggregate_window(window, k)
        fitted, _ = _one_step_and_forecast(xk, kind, m // k)
        err = xk - fitted
        per = m // k
        block = err[:, per:].reshape(panel.n, n_lf, per)
        if np.isnan(block).any():
            raise InsufficientResiduals("undefined residuals after warm-up")
        res[:, te.block_slice(k), :] = np.swapaxes(block, 1, 2)
    return ResidualPanel(res)


# --- base-forecast files ----------------------------------------------------

def ingest_base_forecasts(path, ct: CrossTemporalStructure
                          ) -> list[ForecastSet]:
    """Read a `replication,series,k,step,value` base-forecast file.

    Every replication must cover the full (series, order, step) grid;
    the first missing coordinate is reported.  Series may be named by
    hierarchy label or 1-based row index.
    """
    te, labels = ct.te, ct.cs.labels
    index_of = {lb: i for i, lb in enumerate(labels)}
    index_of.update({str(i + 1): i for i in range(len(labels))})
    cells: dict[int, dict] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["replication", "series", "k", "step", "value"]
        if header is None or [h.strip().lower() for h in header] != expected:
            raise SchemaError(f"{path}: expected header "
                              f"'{','.join(expected)}'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise SchemaError(f"{path}:{lineno}: expected 5 fields")
            try:
                rep, k, step = int(row[0]), int(row[2]), int(row[3])
                value = float(row[4])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: bad numeric field")
            series = row[1].strip()
            if series not in index_of:
                raise SchemaError(f"{path}:{lineno}: unknown series "
                                  f"{series!r}")
            if k not in te.orders:
                raise SchemaError(f"{path}:{lineno}: order {k} not in "
                                  f"{te.orders}")
            if not 1 <= step <= te.m // k:
                raise SchemaError(f"{path}:{lineno}: step {step} outside "
                                  f"1..{te.m // k}")
            key = (index_of[series], k, step)
            repcells = cells.setdefault(rep, {})
            if key in repcells:
                raise SchemaError(f"{path}:{lineno}: duplicate cell "
                                  f"series={series} k={k} step={step} "
                                  f"rep={rep}")
            repcells[key] = value
    if not cells:
        raise SchemaError(f"{path}: no data rows")
    sets = []
    for rep in sorted(cells):
        values = np.empty((ct.cs.n, te.width))
        repcells = cells[rep]
        for i, lb in enumerate(labels):
            for k in te.orders:
                cols = te.block_slice(k)
                for j in range(te.m // k):
                    key = (i, k, j + 1)
                    if key not in repcells:
                        raise MissingCell(f"{path}: missing series={lb} "
                                          f"k={k} step={j + 1} rep={rep}")
                    values[i, cols.start + j] = repcells[key]
        sets.append(ForecastSet(values, labels))
    return sets


def write_base_forecasts(path, sets, ct: CrossTemporalStructure,
                         replications=None) -> None:
    """Write forecast sets in the base-forecast CSV schema."""
    te, labels = ct.te, ct.cs.labels
    reps = list(replications) if replications is not None \
        else list(range(1, len(sets) + 1))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["replication", "series", "k", "step", "value"])
        for rep, fs in zip(reps, sets):
            for i, lb in enumerate(labels):
                for k in te.orders:
                    cols = te.block_slice(k)
                    for j in range(te.m // k):
                        w.writerow([rep, lb, k, j + 1,
                                    repr(float(fs.values[i,
                                                         cols.start + j]))])


# --- the harness ------------------------------------------------------------

@dataclass
class ExperimentResult:
    accuracy: AccuracyReport
    discrepancies: list  # (approach, replication, d_cs, d_te)
    negativity: list[NegativityRow]
    mcb: MCBReport | None
    config: ExperimentConfig = field(repr=False, default=None)


def run_experiment(config: ExperimentConfig, panel: SeriesPanel,
                   ct: CrossTemporalStructure,
                   base_sets: list[ForecastSet] | None = None
                   ) -> ExperimentResult:
    """Run the full rolling-origin experiment.

    ``base_sets`` optionally supplies externally produced base forecasts
    (one set per replication, e.g. from :func:`ingest_base_forecasts`);
    otherwise the configured naive generator is used on each window.
    Replications may execute concurrently; aggregation always happens in
    replication order, so results do not depend on scheduling.
    """
    te, m = ct.te, ct.te.m
    if panel.n != ct.cs.n:
        raise ShapeMismatch(f"panel has {panel.n} series, structure "
                            f"expects {ct.cs.n}")
    if te.m != config.m or te.orders != tuple(config.orders):
        raise ConfigError("temporal structure does not match the config")
    day = config.eval_day
    W = config.window_length
    needed = (config.replications - 1) * m + W + day * m
    if panel.length < needed:
        raise InsufficientHistory(
            f"panel of length {panel.length} cannot host "
            f"{config.replications} replications (needs {needed})")
    if base_sets is not None and len(base_sets) < config.replications:
        raise InsufficientHistory(
            f"{len(base_sets)} ingested base sets for "
            f"{config.replications} replications")

    specs = [parse_approach(a) for a in config.approaches]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate approaches after normalisation: "
                          f"{names}")
    ref_spec = parse_approach(config.reference)
    if ref_spec.name not in names:
        specs.append(ref_spec)
        names.append(ref_spec.name)
    needs_panel = any(s.needs_residuals for s in specs)

    def replicate(r: int):
        origin = r * m + W
        try:
            if base_sets is not None:
                base = base_sets[r]
                if base.values.shape != (ct.cs.n, te.width):
                    raise ShapeMismatch(f"ingested set {r} has shape "
                                        f"{base.values.shape}")
            else:
                base = naive_base(panel, origin, te, config.base, W, day)
            respanel = residual_panel_from_window(
                panel, origin, te, config.base, W) if needs_panel else None
            actual_hf = panel.observations[:, origin + (day - 1) * m:
                                           origin + day * m]
            actual = te.aggregate(actual_hf)
            persb = pers_bu_benchmark(panel, origin, ct, day)
            out = {}
            for spec in specs:
                if spec.method == "persbu":
                    res = sntz(persb, ct) if spec.apply_sntz else persb
                else:
                    res = apply_approach(
                        spec, base, ct, respanel, delta=config.delta,
                        norm=config.norm, jitter=config.jitter)
                out[spec.name] = res
            return actual, out
        except CtrecError as exc:
            raise type(exc)(f"replication {r + 1}: {exc}") from exc

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(replicate, range(config.replications)))
    else:
        results = [replicate(r) for r in range(config.replications)]

    # aggregate in replication order
    sqerr = {(nm, k): np.zeros(panel.n) for nm in names for k in te.orders}
    actsum = {k: np.zeros(panel.n) for k in te.orders}
    discrepancies = []
    tagged_runs = []
    for r, (actual, outputs) in enumerate(results):
        for k in te.orders:
            cols = te.block_slice(k)
            actsum[k] += actual[:, cols].sum(axis=1)
        for nm in names:
            fs = outputs[nm]
            diff = fs.values - actual
            for k in te.orders:
                cols = te.block_slice(k)
                sqerr[(nm, k)] += (diff[:, cols] ** 2).sum(axis=1)
            rep_disc = gross_discrepancies(fs, ct)
            discrepancies.append((nm, r + 1, rep_disc.d_cs, rep_disc.d_te))
            tagged_runs.append((nm, r + 1, fs))

    nrep = config.replications
    cells, pooled = {}, {}
    levels = panel.levels
    level_names = []
    for lv in levels:
        if lv not in level_names:
            level_names.append(lv)
    for k in te.orders:
        L = nrep * (m // k)
        mean_act = actsum[k] / L
        if (mean_act == 0).any():
            bad = panel.labels[int(np.flatnonzero(mean_act == 0)[0])]
            raise ZeroMeanActuals(f"series {bad!r} has zero mean actuals "
                                  f"at order {k}")
        for nm in names:
            rmse = np.sqrt(sqerr[(nm, k)] / L)
            cells[(nm, k)] = 100.0 * rmse / mean_act
            for lv in level_names:
                mask = np.array([x == lv for x in levels])
                pooled_rmse = np.sqrt(sqerr[(nm, k)][mask].sum()
                                      / (L * mask.sum()))
                pooled_mean = actsum[k][mask].sum() / (L * mask.sum())
                pooled[(nm, k, lv)] = 100.0 * pooled_rmse / pooled_mean

    report = AccuracyReport(panel.labels, levels, te.orders, tuple(names),
                            ref_spec.name, cells, pooled)
    negativity = negativity_audit(tagged_runs, ct)
    mcb = None
    if len(names) >= 2 and panel.n >= 2:
        mcb = mcb_nemenyi(report.nrmse_matrix(1), config.alpha,
                          tuple(names))
    return ExperimentResult(report, discrepancies, negativity, mcb, config)


def write_discrepancy_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["approach", "replication", "d_cs", "d_te"])
        for approach, rep, d_cs, d_te in rows:
            w.writerow([approach, rep, f"{d_cs:.10g}", f"{d_te:.10g}"])


def write_negativity_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["approach", "k", "reps_with_negative", "min_series",
                    "max_series", "min_value", "max_value"])
        for row in rows:
            w.writerow([row.approach, row.k, row.reps_with_negative,
                        row.min_series, row.max_series,
                        f"{row.min_value:.10g}", f"{row.max_value:.10g}"])
