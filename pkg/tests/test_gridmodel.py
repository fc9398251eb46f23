import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gridfdi.gridmodel import (
    GridParams,
    LtiModel,
    Variant,
    build_attack_matrix,
    build_continuous,
    build_model,
    default_params,
    discretize_model,
    validate_stability,
)
from gridfdi.numerics import zoh_discretize
from gridfdi.sim import LoadStep, gen_load_profile, simulate

TWO_PI = 2 * math.pi
TS = 0.04


def test_variant_dimensions():
    p = default_params()
    for variant, (n, ny) in {
        Variant.AC_ONLY: (9, 3),
        Variant.AC_DC: (10, 4),
        Variant.AC_DC_VI: (12, 4),
    }.items():
        m = build_continuous(variant, p)
        assert m.a_c.shape == (n, n)
        assert m.b_cd.shape == (n, 2)
        assert m.b_cf.shape == (n, ny)
        assert m.c_out.shape == (ny, n)
        assert len(m.state_labels) == n


def test_dc_row_carries_ac_flow_gain():
    p = default_params()
    m = build_continuous(Variant.AC_DC_VI, p)
    row = m.state_index("dPdc12")
    col = m.state_index("dPac12")
    assert_allclose(m.a_c[row, col], p.kac / p.tdc)
    assert_allclose(m.a_c[row, m.state_index("dw1")], p.k1 / p.tdc)
    assert_allclose(m.a_c[row, row], -1.0 / p.tdc)


def test_tie_row_vanishes_for_equal_frequencies():
    m = build_continuous(Variant.AC_DC_VI, default_params())
    row = m.a_c[m.state_index("dPac12")]
    x = np.zeros(m.n_states)
    x[m.state_index("dw1")] = 0.37
    x[m.state_index("dw2")] = 0.37
    assert row @ x == pytest.approx(0.0, abs=1e-15)


def test_ac_only_warns_when_dc_gains_set():
    with pytest.warns(UserWarning):
        m = build_continuous(Variant.AC_ONLY, default_params())
    assert "dPdc12" not in m.state_labels


def test_attack_matrix_structure():
    p = default_params()
    m = build_continuous(Variant.AC_DC_VI, p)
    b = m.b_cf
    col = {c: m.channel_index(c) for c in m.channel_labels}
    ix = m.state_index

    # frequency-1 column: modulation controller plus area-1 secondary loop
    assert_allclose(b[ix("dPdc12"), col["Freq1"]], p.k1 / p.tdc)
    assert_allclose(b[ix("dPagc1"), col["Freq1"]], p.ki1 * p.beta1 / TWO_PI)
    # AC-flow column hits the DC reference and both control errors
    assert_allclose(b[ix("dPdc12"), col["AcFlow12"]], p.kac / p.tdc)
    assert_allclose(b[ix("dPagc1"), col["AcFlow12"]], p.ki1)
    assert_allclose(b[ix("dPagc2"), col["AcFlow12"]], -p.ki2)
    # DC-flow column only feeds the secondary loops
    assert_allclose(b[ix("dPagc1"), col["DcFlow12"]], p.ki1)
    assert_allclose(b[ix("dPagc2"), col["DcFlow12"]], -p.ki2)
    assert np.count_nonzero(b[:, col["DcFlow12"]]) == 2

    # local loops are never attacked: swing, turbine, tie, storage rows zero
    for lab in ("dw1", "dw2", "dPm11", "dPm12", "dPm21", "dPm22",
                "dPac12", "dPess1", "dPess2"):
        assert np.all(b[ix(lab)] == 0.0), lab


def test_attack_matrix_zero_when_control_gains_zero():
    p = replace(default_params(), k1=0.0, k2=0.0, kac=0.0, ki1=0.0, ki2=0.0)
    b = build_attack_matrix(Variant.AC_DC_VI, p)
    assert np.all(b == 0.0)


def test_storage_disabled_matches_plain_acdc():
    p = replace(default_params(), jem1=0.0, jem2=0.0)
    m_vi = build_model(Variant.AC_DC_VI, p, TS)
    m_dc = build_model(Variant.AC_DC, p, TS)
    d = gen_load_profile(LoadStep(1, 0.03, 5.0), 1000, TS)
    t_vi = simulate(m_vi, d)
    t_dc = simulate(m_dc, d)
    assert np.max(np.abs(t_vi.x[:, :10] - t_dc.x)) <= 1e-12
    # the storage filter states never move
    assert np.max(np.abs(t_vi.x[:, 10:])) <= 1e-15


def test_discretize_joint_matches_separate():
    m = build_continuous(Variant.AC_DC_VI, default_params())
    md = discretize_model(m, TS)
    a_ref, bd_ref = zoh_discretize(m.a_c, m.b_cd, TS)
    _, bf_ref = zoh_discretize(m.a_c, m.b_cf, TS)
    assert_allclose(md.a, a_ref, atol=1e-14)
    assert_allclose(md.b_d, bd_ref, atol=1e-14)
    assert_allclose(md.b_f, bf_ref, atol=1e-14)


def test_discretize_identity_edge():
    m = build_continuous(Variant.AC_DC, default_params())
    frozen = replace(m, a_c=np.zeros_like(m.a_c))
    md = discretize_model(frozen, TS)
    assert_allclose(md.a, np.eye(m.n_states), atol=1e-15)


def test_discretize_semigroup():
    m = build_continuous(Variant.AC_DC_VI, default_params())
    a1 = discretize_model(m, 0.02).a
    a2 = discretize_model(m, 0.04).a
    assert_allclose(a1 @ a1, a2, atol=1e-9)


def test_all_variants_stable_at_default_sampling():
    p = default_params()
    for variant in Variant:
        rep = validate_stability(build_model(variant, p, TS))
        assert rep.stable, variant
        assert rep.eigenvalue_moduli[0] < 1.0 - 1e-9


def test_stability_report_flags():
    m = build_model(Variant.AC_DC, default_params(), TS)
    stable = replace(m, a=0.5 * np.eye(m.n_states))
    rep = validate_stability(stable)
    assert rep.stable and rep.eigenvalue_moduli[0] == pytest.approx(0.5)
    marginal = replace(m, a=np.eye(m.n_states))
    assert not validate_stability(marginal).stable


def test_rebuild_is_bit_identical():
    p = default_params()
    m1 = build_model(Variant.AC_DC_VI, p, TS)
    m2 = build_model(Variant.AC_DC_VI, GridParams(), TS)
    for name in ("a_c", "b_cd", "b_cf", "c_out", "a", "b_d", "b_f"):
        assert np.array_equal(getattr(m1, name), getattr(m2, name)), name


def test_label_order_is_frozen():
    m = build_continuous(Variant.AC_DC_VI, default_params())
    assert m.state_labels == (
        "dw1", "dw2", "dPm11", "dPm12", "dPm21", "dPm22",
        "dPagc1", "dPagc2", "dPac12", "dPdc12", "dPess1", "dPess2",
    )
    assert m.channel_labels == ("Freq1", "Freq2", "AcFlow12", "DcFlow12")


def test_params_validation():
    with pytest.raises(ValueError):
        GridParams(phi1=(0.7, 0.6))
    with pytest.raises(ValueError):
        GridParams(tch2=(0.0, 0.3))
    with pytest.raises(ValueError):
        GridParams(kp1=-5.0)
    with pytest.raises(ValueError):
        GridParams(jem2=-0.1)
