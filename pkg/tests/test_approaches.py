"""Tests for the approach grammar and its dispatch."""

import numpy as np
import pytest

from ctrec.approaches import (
    apply_approach,
    parse_approach,
    split_approaches,
)
from ctrec.covariance import (
    ResidualPanel,
    cov_kron,
    cs_covariance,
    ct_covariance,
    te_covariance,
)
from ctrec.errors import ConfigError
from ctrec.hierarchy import (
    ForecastSet,
    build_cross_sectional,
    build_cross_temporal,
    build_temporal,
)
from ctrec.reconcile import reconcile_oct, sntz


@pytest.fixture
def setup():
    rng = np.random.default_rng(0)
    cs = build_cross_sectional([[1, 1, 1], [1, 1, 0]])
    te = build_temporal(4, [4, 2, 1])
    ct = build_cross_temporal(cs, te)
    Y = ForecastSet(rng.normal(5, 2, (cs.n, te.width)))
    panel = ResidualPanel(rng.normal(size=(cs.n, te.width, 12)))
    return ct, Y, panel


def test_parse_plain_tokens():
    assert parse_approach("ctbu").method == "ctbu"
    assert parse_approach("base").method == "base"
    assert parse_approach("persbu").method == "persbu"
    assert parse_approach("PERSBU ").name == "persbu"


def test_parse_oct_kinds():
    for kind in ("ols", "struc", "wlsv", "shr", "sam", "bdshr", "bdsam"):
        spec = parse_approach(f"oct({kind})")
        assert spec.method == "oct" and spec.ct_kind == kind
    with pytest.raises(ConfigError):
        parse_approach("oct(wls)")


def test_parse_mixed_oct():
    spec = parse_approach("oct(ols_cs, struc_te)")
    assert spec.cs_kind == "ols" and spec.te_kind == "struc"
    swapped = parse_approach("oct(struc_te, ols_cs)")
    assert swapped.name == spec.name
    with pytest.raises(ConfigError):
        parse_approach("oct(wlsv_te, wls_cs)")  # data kinds not separable


def test_parse_sequential_positional_default():
    spec = parse_approach("seq(ols, struc)")
    assert spec.cs_kind == "ols" and spec.te_kind == "struc"
    assert spec.first == "cs"
    assert spec.name == "seq(ols_cs,struc_te)"


def test_parse_iterative_requires_resolvable_order():
    spec = parse_approach("ite(wlsv, wls)")
    assert spec.first == "te" and spec.te_kind == "wlsv"
    tagged = parse_approach("ite(struc_cs, ols_te)")
    assert tagged.first == "cs"
    with pytest.raises(ConfigError):
        parse_approach("ite(ols, struc)")


def test_parse_ka_order():
    spec = parse_approach("ka(wlsv, wls)")
    assert spec.method == "ka" and spec.first == "te"
    assert spec.te_kind == "wlsv" and spec.cs_kind == "wls"


def test_parse_pbu():
    spec = parse_approach("pbu(te=wlsv)")
    assert spec.first == "te" and spec.te_kind == "wlsv"
    spec = parse_approach("pbu(cs=wls)")
    assert spec.first == "cs" and spec.cs_kind == "wls"
    with pytest.raises(ConfigError):
        parse_approach("pbu(up=ols)")


def test_parse_sntz_suffix_and_flags():
    spec = parse_approach("oct(struc)+sntz")
    assert spec.apply_sntz and spec.name == "oct(struc)+sntz"
    assert not parse_approach("oct(struc)").apply_sntz
    assert parse_approach("oct(wlsv)").needs_residuals
    assert not parse_approach("oct(struc)+sntz").needs_residuals
    with pytest.raises(ConfigError):
        parse_approach("oct(ols)+top")


def test_split_approaches_paren_aware():
    text = "oct(ols), seq(ols_cs, struc_te)+sntz, pbu(te=wlsv)"
    assert split_approaches(text) == [
        "oct(ols)", "seq(ols_cs, struc_te)+sntz", "pbu(te=wlsv)"]


def test_apply_oct_matches_direct_call(setup):
    ct, Y, panel = setup
    spec = parse_approach("oct(wlsv)")
    via_grammar = apply_approach(spec, Y, ct, panel)
    direct = reconcile_oct(Y, ct, ct_covariance("wlsv", ct, panel))
    np.testing.assert_allclose(via_grammar.values, direct.values)


def test_apply_mixed_oct_matches_kron(setup):
    ct, Y, panel = setup
    out = apply_approach(parse_approach("oct(struc_cs,ols_te)"), Y, ct)
    cov = cov_kron(cs_covariance("struc", ct.cs),
                   te_covariance("ols", ct.te), ct)
    np.testing.assert_allclose(out.values,
                               reconcile_oct(Y, ct, cov).values)


def test_apply_sntz_wrap(setup):
    ct, Y, panel = setup
    shifted = ForecastSet(Y.values - 10.0)
    plain = apply_approach(parse_approach("oct(ols)"), shifted, ct)
    wrapped = apply_approach(parse_approach("oct(ols)+sntz"), shifted, ct)
    np.testing.assert_allclose(wrapped.values, sntz(plain, ct).values)
    assert wrapped.values.min() >= 0.0


def test_apply_base_identity(setup):
    ct, Y, panel = setup
    out = apply_approach(parse_approach("base"), Y, ct)
    np.testing.assert_array_equal(out.values, Y.values)


def test_apply_persbu_rejected(setup):
    ct, Y, panel = setup
    with pytest.raises(ConfigError):
        apply_approach(parse_approach("persbu"), Y, ct)


def test_data_kind_without_panel_fails(setup):
    ct, Y, panel = setup
    from ctrec.errors import InsufficientResiduals

    with pytest.raises(InsufficientResiduals):
        apply_approach(parse_approach("oct(wlsv)"), Y, ct)


@pytest.mark.parametrize("joint,twostep", [
    ("oct(ols)", "seq(ols_te,ols_cs)"),
    ("oct(ols)", "seq(ols_cs,ols_te)"),
    ("oct(struc)", "seq(struc_cs,struc_te)"),
    ("oct(ols_cs,struc_te)", "seq(ols_cs,struc_te)"),
    ("oct(struc_cs,ols_te)", "seq(struc_cs,ols_te)"),
])
def test_named_joint_sequential_equivalences(setup, joint, twostep):
    # constant separable weights make the simultaneous solve and the
    # two-step pass coincide, in either order of application
    ct, Y, panel = setup
    a = apply_approach(parse_approach(joint), Y, ct)
    b = apply_approach(parse_approach(twostep), Y, ct)
    scale = np.abs(a.values).max()
    assert np.abs(a.values - b.values).max() <= 1e-8 * scale
