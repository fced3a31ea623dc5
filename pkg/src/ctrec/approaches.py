"""Textual grammar for reconciliation approaches.

An approach string names one reconciliation recipe, mirroring the
conventional naming in the reconciliation literature:

    base | persbu | ctbu
    oct(<ct>)                 <ct>: ols struc wlsv shr sam bdshr bdsam
    oct(<a>_cs,<b>_te)        mixed Kronecker, <a>/<b> in {ols, struc}
    seq(<cs>,<te>)            one two-step pass, first argument applied first
    ite(<x>,<y>)              alternating passes to tolerance
    ka(<te>,<cs>)             temporal pass + averaged cross-sectional map
    pbu(te=<te>) | pbu(cs=<cs>)   reconcile one dimension, bottom-up the other

Any approach may carry a ``+sntz`` suffix to clamp the reconciled bottom
high-frequency block at zero and re-aggregate.

Argument dimensions may be tagged (``wlsv_te``, ``struc_cs``); untagged
arguments are inferred where unambiguous (``wls`` is cross-sectional,
``wlsv`` temporal) and otherwise fall back to the positional convention of
the method (``seq``: cross-sectional first; ``ka``: temporal first).  For
``ite`` both orders are meaningful, so ambiguous untagged pairs are
rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .covariance import (
    CS_KINDS,
    CT_KINDS,
    TE_KINDS,
    ResidualPanel,
    cov_kron,
    cs_covariance,
    ct_covariance,
    te_covariance,
)
from .errors import ConfigError, InsufficientResiduals
from .hierarchy import CrossTemporalStructure, ForecastSet, as_forecast_set
from .reconcile import (
    ct_bottom_up,
    partly_bottom_up,
    reconcile_iterative,
    reconcile_ka,
    reconcile_oct,
    sequential,
    sntz,
)

__all__ = ["ApproachSpec", "parse_approach", "apply_approach",
           "split_approaches"]

_DATA_KINDS = frozenset({"wls", "wlsv", "shr", "sam", "bdshr", "bdsam"})
_CALL_RE = re.compile(r"^(oct|seq|ite|ka|pbu)\((.*)\)$")


@dataclass(frozen=True)
class ApproachSpec:
    """A parsed approach: method, covariance kinds, and the sntz flag."""

    name: str
    method: str
    ct_kind: str | None = None
    cs_kind: str | None = None
    te_kind: str | None = None
    first: str | None = None
    apply_sntz: bool = False

    @property
    def needs_residuals(self) -> bool:
        return any(k in _DATA_KINDS
                   for k in (self.ct_kind, self.cs_kind, self.te_kind)
                   if k is not None)


def split_approaches(text: str) -> list[str]:
    """Split a comma-separated approach list, ignoring commas in parens."""
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            if "".join(cur).strip():
                out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        out.append("".join(cur).strip())
    return out


def _parse_arg(tok: str) -> tuple[str, str | None]:
    tok = tok.strip()
    for suffix, dim in (("_cs", "cs"), ("_te", "te")):
        if tok.endswith(suffix):
            return tok[: -len(suffix)], dim
    return tok, None


def _resolve_pair(method: str, args: list[str]) -> tuple[str, str, str]:
    """Return (cs_kind, te_kind, first_dimension) for a two-argument call."""
    if len(args) != 2:
        raise ConfigError(f"{method} takes exactly two arguments")
    (k1, d1), (k2, d2) = _parse_arg(args[0]), _parse_arg(args[1])
    if d1 is None and k1 == "wls":
        d1 = "cs"
    if d1 is None and k1 == "wlsv":
        d1 = "te"
    if d2 is None and k2 == "wls":
        d2 = "cs"
    if d2 is None and k2 == "wlsv":
        d2 = "te"
    if d1 is None and d2 is not None:
        d1 = "cs" if d2 == "te" else "te"
    if d2 is None and d1 is not None:
        d2 = "cs" if d1 == "te" else "te"
    if d1 is None and d2 is None:
        if method == "seq":
            d1, d2 = "cs", "te"
        elif method == "ka":
            d1, d2 = "te", "cs"
        else:
            raise ConfigError(
                f"ambiguous argument order in {method}({args[0]},{args[1]}); "
                f"tag the kinds, e.g. {method}({k1}_te,{k2}_cs)")
    if {d1, d2} != {"cs", "te"}:
        raise ConfigError(f"{method} needs one cross-sectional and one "
                          f"temporal kind, got tags ({d1}, {d2})")
    cs_kind, te_kind = (k1, k2) if d1 == "cs" else (k2, k1)
    if cs_kind not in CS_KINDS:
        raise ConfigError(f"unknown cross-sectional kind {cs_kind!r}")
    if te_kind not in TE_KINDS:
        raise ConfigError(f"unknown temporal kind {te_kind!r}")
    return cs_kind, te_kind, d1


def parse_approach(text: str) -> ApproachSpec:
    """Parse one approach string; raises ``ConfigError`` on bad grammar."""
    token = "".join(str(text).split()).lower()
    if not token:
        raise ConfigError("empty approach")
    apply_sntz = False
    if token.endswith("+sntz"):
        apply_sntz = True
        token = token[: -len("+sntz")]
    if "+" in token:
        raise ConfigError(f"unknown suffix in approach {text!r}")

    if token in ("base", "persbu", "ctbu"):
        name = token + ("+sntz" if apply_sntz else "")
        return ApproachSpec(name, token, apply_sntz=apply_sntz)

    match = _CALL_RE.match(token)
    if not match:
        raise ConfigError(f"cannot parse approach {text!r}")
    method, inner = match.group(1), match.group(2)
    args = [a.strip() for a in inner.split(",")] if inner else []

    if method == "oct":
        if len(args) == 1:
            kind = args[0]
            if kind not in CT_KINDS:
                raise ConfigError(f"unknown cross-temporal kind {kind!r}")
            name = f"oct({kind})" + ("+sntz" if apply_sntz else "")
            return ApproachSpec(name, "oct", ct_kind=kind,
                                apply_sntz=apply_sntz)
        cs_kind, te_kind, _ = _resolve_pair("oct", args)
        if cs_kind not in ("ols", "struc") or te_kind not in ("ols", "struc"):
            raise ConfigError("mixed oct supports only ols/struc factors")
        name = (f"oct({cs_kind}_cs,{te_kind}_te)"
                + ("+sntz" if apply_sntz else ""))
        return ApproachSpec(name, "oct", cs_kind=cs_kind, te_kind=te_kind,
                            apply_sntz=apply_sntz)

    if method == "pbu":
        if len(args) != 1 or "=" not in args[0]:
            raise ConfigError("pbu needs a single te=<kind> or cs=<kind> "
                              "argument")
        dim, _, kind = args[0].partition("=")
        if dim == "te":
            if kind not in TE_KINDS:
                raise ConfigError(f"unknown temporal kind {kind!r}")
            name = f"pbu(te={kind})" + ("+sntz" if apply_sntz else "")
            return ApproachSpec(name, "pbu", te_kind=kind, first="te",
                                apply_sntz=apply_sntz)
        if dim == "cs":
            if kind not in CS_KINDS:
                raise ConfigError(f"unknown cross-sectional kind {kind!r}")
            name = f"pbu(cs={kind})" + ("+sntz" if apply_sntz else "")
            return ApproachSpec(name, "pbu", cs_kind=kind, first="cs",
                                apply_sntz=apply_sntz)
        raise ConfigError(f"pbu dimension must be te or cs, got {dim!r}")

    cs_kind, te_kind, first = _resolve_pair(method, args)
    if method == "ka":
        first = "te"  # the heuristic always reconciles temporally first
        name = f"ka({te_kind}_te,{cs_kind}_cs)"
    else:
        order = (f"{cs_kind}_cs,{te_kind}_te" if first == "cs"
                 else f"{te_kind}_te,{cs_kind}_cs")
        name = f"{method}({order})"
    name += "+sntz" if apply_sntz else ""
    return ApproachSpec(name, method, cs_kind=cs_kind, te_kind=te_kind,
                        first=first, apply_sntz=apply_sntz)


def _cs_models(kind: str, ct: CrossTemporalStructure,
               panel: ResidualPanel | None, jitter: float, lam):
    """Per-order cross-sectional models (a single model when constant)."""
    if kind in ("ols", "struc"):
        return cs_covariance(kind, ct.cs)
    if panel is None:
        raise InsufficientResiduals(
            f"cross-sectional kind {kind!r} needs a residual panel")
    return {k: cs_covariance(kind, ct.cs, panel, ct.te, k, jitter, lam)
            for k in ct.te.orders}


def _te_models(kind: str, ct: CrossTemporalStructure,
               panel: ResidualPanel | None, jitter: float, lam,
               bottom_only: bool = False):
    """Per-series temporal models (a single model when constant)."""
    if kind in ("ols", "struc"):
        return te_covariance(kind, ct.te)
    if panel is None:
        raise InsufficientResiduals(
            f"temporal kind {kind!r} needs a residual panel")
    series = range(ct.cs.n_a, ct.cs.n) if bottom_only else range(ct.cs.n)
    return [te_covariance(kind, ct.te, panel, i, jitter, lam)
            for i in series]


def apply_approach(spec: ApproachSpec, Y, ct: CrossTemporalStructure,
                   panel: ResidualPanel | None = None, *,
                   delta: float | None = None, norm: str = "linf",
                   max_iter: int = 100, jitter: float = 0.0,
                   lambda_override: float | None = None,
                   check: bool = True) -> ForecastSet:
    """Run one parsed approach on a forecast set.

    ``panel`` supplies in-sample residuals for the data-driven covariance
    kinds; structure-only approaches ignore it.  The persistence benchmark
    cannot be computed from a forecast set alone and is handled by the
    experiment harness.
    """
    fs = as_forecast_set(Y, ct)
    if spec.method == "base":
        out = fs.copy()
    elif spec.method == "persbu":
        raise ConfigError("persbu requires observed history; it is computed "
                          "by the experiment harness")
    elif spec.method == "ctbu":
        B1 = fs.values[ct.cs.n_a:, ct.te.block_slice(1)]
        out = ct_bottom_up(B1, ct)
        out.labels = fs.labels
    elif spec.method == "oct":
        if spec.ct_kind is not None:
            cov = ct_covariance(spec.ct_kind, ct, panel, jitter,
                                lambda_override)
        else:
            cov = cov_kron(cs_covariance(spec.cs_kind, ct.cs),
                           te_covariance(spec.te_kind, ct.te), ct)
        out = reconcile_oct(fs, ct, cov, check=check)
    elif spec.method == "seq":
        out = sequential(fs, ct,
                         _cs_models(spec.cs_kind, ct, panel, jitter,
                                    lambda_override),
                         _te_models(spec.te_kind, ct, panel, jitter,
                                    lambda_override),
                         order="cst" if spec.first == "cs" else "tcs")
    elif spec.method == "ite":
        out, _ = reconcile_iterative(
            fs, ct,
            _cs_models(spec.cs_kind, ct, panel, jitter, lambda_override),
            _te_models(spec.te_kind, ct, panel, jitter, lambda_override),
            delta=delta, norm=norm, max_iter=max_iter,
            order="cst" if spec.first == "cs" else "tcs")
    elif spec.method == "ka":
        out = reconcile_ka(fs, ct,
                           _te_models(spec.te_kind, ct, panel, jitter,
                                      lambda_override),
                           _cs_models(spec.cs_kind, ct, panel, jitter,
                                      lambda_override))
    elif spec.method == "pbu":
        if spec.first == "te":
            cov = _te_models(spec.te_kind, ct, panel, jitter,
                             lambda_override, bottom_only=True)
        else:
            cov = cs_covariance(spec.cs_kind, ct.cs, panel, ct.te, 1,
                                jitter, lambda_override)
        out = partly_bottom_up(fs, ct, spec.first, cov, check=check)
    else:
        raise ConfigError(f"unknown method {spec.method!r}")
    if spec.apply_sntz:
        out = sntz(out, ct)
    return out
