import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gridfdi.gridmodel import Variant, build_model, default_params
from gridfdi.sim import (
    AttackScenario,
    LoadStep,
    LoadStochastic,
    NoiseSpec,
    Pulse,
    Ramp,
    Random,
    Scaling,
    Trajectory,
    combine_attacks,
    compute_metrics,
    gen_attack_signal,
    gen_load_profile,
    min_disruptive_magnitude,
    simulate,
    steady_state_offset_hz,
    write_trajectory_csv,
)

TWO_PI = 2 * math.pi
TS = 0.04


@pytest.fixture(scope="module")
def model():
    return build_model(Variant.AC_DC_VI, default_params(), TS)


# ---------------------------------------------------------------------------
# waveforms
# ---------------------------------------------------------------------------

def test_load_step_sample_alignment():
    d = gen_load_profile(LoadStep(1, 0.03, 5.0), 200, TS)
    assert d[124, 0] == 0.0
    assert d[125, 0] == 0.03
    assert np.all(d[:, 1] == 0.0)


def test_load_stochastic_zero_volatility_is_zero():
    d = gen_load_profile(LoadStochastic(volatility=(0.0, 0.0), seed=3), 500, TS)
    assert np.all(d == 0.0)


def test_load_stochastic_reproducible():
    a = gen_load_profile(LoadStochastic(seed=11), 300, TS)
    b = gen_load_profile(LoadStochastic(seed=11), 300, TS)
    assert np.array_equal(a, b)
    c = gen_load_profile(LoadStochastic(seed=12), 300, TS)
    assert not np.array_equal(a, c)


def test_attack_step_onset(model):
    sc = AttackScenario(entries=(("AcFlow12", 0.1),), k_min=250)
    f, mask = gen_attack_signal(sc, 400, model)
    j = model.channel_index("AcFlow12")
    assert f[249, j] == 0.0
    assert np.all(f[250:, j] == 0.1)
    assert np.all(mask == 1.0)


def test_attack_frequency_channel_is_converted(model):
    sc = AttackScenario(entries=(("Freq1", 0.1),), k_min=0)
    f, _ = gen_attack_signal(sc, 10, model)
    assert_allclose(f[0, model.channel_index("Freq1")], 0.1 * TWO_PI)


def test_attack_ramp_zero_slope(model):
    sc = AttackScenario(entries=(("AcFlow12", 0.5),), k_min=5, shape=Ramp(0.0))
    f, _ = gen_attack_signal(sc, 50, model)
    assert np.all(f == 0.0)


def test_attack_pulse_window(model):
    sc = AttackScenario(entries=(("DcFlow12", 0.2),), k_min=10, shape=Pulse(4))
    f, _ = gen_attack_signal(sc, 30, model)
    j = model.channel_index("DcFlow12")
    assert np.all(f[10:14, j] == 0.2)
    assert f[9, j] == 0.0 and f[14, j] == 0.0


def test_attack_random_variance(model):
    sc = AttackScenario(entries=(("AcFlow12", 1.0),), k_min=0, shape=Random(std=0.3, seed=5))
    f, _ = gen_attack_signal(sc, 100_000, model)
    var = np.var(f[:, model.channel_index("AcFlow12")])
    assert abs(var - 0.09) <= 0.05 * 0.09


def test_attack_scaling_mask(model):
    sc = AttackScenario(entries=(("Freq1", 1.5),), k_min=20, shape=Scaling())
    f, mask = gen_attack_signal(sc, 40, model)
    j = model.channel_index("Freq1")
    assert np.all(f == 0.0)
    assert np.all(mask[:20, j] == 1.0)
    assert np.all(mask[20:, j] == 1.5)


def test_attack_unknown_channel(model):
    sc = AttackScenario(entries=(("Bogus", 0.1),), k_min=0)
    with pytest.raises(ValueError):
        gen_attack_signal(sc, 10, model)


def test_attack_duplicate_channel_rejected():
    with pytest.raises(ValueError):
        AttackScenario(entries=(("Freq1", 0.1), ("Freq1", 0.2)), k_min=0)


def test_combine_rejects_scaling_plus_additive(model):
    s1 = AttackScenario(entries=(("Freq1", 0.1),), k_min=0)
    s2 = AttackScenario(entries=(("Freq1", 1.2),), k_min=0, shape=Scaling())
    with pytest.raises(ValueError):
        combine_attacks([s1, s2], 20, model)


# ---------------------------------------------------------------------------
# simulation invariants
# ---------------------------------------------------------------------------

def test_zero_inputs_zero_trajectory(model):
    tr = simulate(model, np.zeros((100, 2)))
    assert np.all(tr.x == 0.0)
    assert np.all(tr.y_tilde == 0.0)
    assert np.all(tr.ace1 == 0.0)


def test_superposition(model):
    K = 500
    d = gen_load_profile(LoadStep(1, 0.03, 2.0), K, TS)
    f, _ = gen_attack_signal(
        AttackScenario(entries=(("AcFlow12", 0.2),), k_min=100), K, model)
    both = simulate(model, d, f)
    only_d = simulate(model, d)
    only_f = simulate(model, np.zeros((K, 2)), f)
    assert np.max(np.abs(both.x - only_d.x - only_f.x)) <= 1e-10


def test_homogeneity(model):
    K = 500
    f1, _ = gen_attack_signal(
        AttackScenario(entries=(("AcFlow12", 0.1),), k_min=50), K, model)
    t1 = simulate(model, np.zeros((K, 2)), f1)
    t2 = simulate(model, np.zeros((K, 2)), 2.0 * f1)
    assert np.max(np.abs(t2.x - 2.0 * t1.x)) <= 1e-10


def test_noise_determinism(model):
    K = 300
    d = gen_load_profile(LoadStochastic(seed=4), K, TS)
    spec = NoiseSpec(enabled=True, seed=9)
    a = simulate(model, d, noise=spec)
    b = simulate(model, d, noise=spec)
    assert np.array_equal(a.x, b.x)
    c = simulate(model, d, noise=NoiseSpec(enabled=True, seed=10))
    assert not np.array_equal(a.x, c.x)


def test_bounded_response(model):
    K = 2000
    d = gen_load_profile(LoadStep(1, 0.03, 1.0), K, TS)
    tr = simulate(model, d)
    # crude absolute sanity bound: well below 10^3 x input scale
    assert np.max(np.abs(tr.x)) < 30.0


def test_corruption_identity(model):
    K = 300
    f, _ = gen_attack_signal(
        AttackScenario(entries=(("DcFlow12", 0.3),), k_min=10), K, model)
    tr = simulate(model, np.zeros((K, 2)), f)
    assert_allclose(tr.y_tilde, tr.y + tr.f, atol=1e-15)


def test_scaling_applied_inside_loop(model):
    K = 400
    d = gen_load_profile(LoadStep(1, 0.03, 2.0), K, TS)
    sc = AttackScenario(entries=(("AcFlow12", 1.5),), k_min=100, shape=Scaling())
    f, mask = gen_attack_signal(sc, K, model)
    tr = simulate(model, d, f, scale_mask=mask)
    j = model.channel_index("AcFlow12")
    assert_allclose(tr.y_tilde[150:, j], 1.5 * tr.y[150:, j], atol=1e-12)
    # corrupting the measurement must change the closed loop
    ref = simulate(model, d)
    assert np.max(np.abs(tr.x - ref.x)) > 1e-6


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _synthetic_traj(freq1_hz):
    K = freq1_hz.size
    x = np.zeros((K, 2))
    x[:, 0] = freq1_hz * TWO_PI
    zeros = np.zeros(K)
    return Trajectory(
        t_s=TS, x=x, y=np.zeros((K, 1)), y_tilde=np.zeros((K, 1)),
        d=np.zeros((K, 2)), f=np.zeros((K, 1)),
        ace1=zeros, ace2=zeros, pdc_ref=zeros,
        state_labels=("dw1", "dw2"), channel_labels=("Freq1",),
    )


def test_metrics_constant_signal():
    tr = _synthetic_traj(np.full(200, -0.8))
    met = compute_metrics(tr)
    assert met.mfd_hz[1][0] == pytest.approx(-0.8)
    assert met.ssfd_hz[1] == pytest.approx(-0.8)


def test_metrics_decaying_oscillation():
    t = np.arange(2000) * TS
    sig = np.exp(-0.2 * t) * np.sin(2.0 * t)
    tr = _synthetic_traj(sig)
    met = compute_metrics(tr)
    first_peak = sig[np.argmax(np.abs(sig))]
    assert met.mfd_hz[1][0] == pytest.approx(first_peak)
    assert abs(met.ssfd_hz[1]) < 1e-6


def test_metrics_window_bounds():
    tr = _synthetic_traj(np.zeros(10))
    with pytest.raises(ValueError):
        compute_metrics(tr, window_start=10)


def test_ssfd_matches_dc_gain(model):
    K = int(400.0 / TS)
    d = gen_load_profile(LoadStep(1, 0.03, 5.0), K, TS)
    tr = simulate(model, d)
    met = compute_metrics(tr, window_start=int(5.0 / TS))
    predicted = steady_state_offset_hz(model, [0.03, 0.0], area=1)
    assert abs(met.ssfd_hz[1] - predicted) <= 1e-6
    # secondary control restores frequency, so both are essentially zero
    assert abs(predicted) < 1e-9
    assert abs(met.ssfd_hz[1]) <= abs(met.mfd_hz[1][0])


# ---------------------------------------------------------------------------
# disruptive magnitude
# ---------------------------------------------------------------------------

def test_min_disruptive_zero_threshold(model):
    assert min_disruptive_magnitude(model, "AcFlow12", 0.0, 100) == 0.0


def test_min_disruptive_linearity(model):
    K = int(40.0 / TS)
    m08 = min_disruptive_magnitude(model, "AcFlow12", 0.8, K)
    m04 = min_disruptive_magnitude(model, "AcFlow12", 0.4, K)
    assert abs(m08 - 2.0 * m04) <= 1e-6


def test_min_disruptive_bisect_cross_check(model):
    K = int(40.0 / TS)
    lin = min_disruptive_magnitude(model, "AcFlow12", 0.8, K)
    bis = min_disruptive_magnitude(model, "AcFlow12", 0.8, K, method="bisect")
    assert abs(lin - bis) <= 1e-4


def test_min_disruptive_unreachable():
    from dataclasses import replace
    p = replace(default_params(), ki1=0.0, ki2=0.0)
    m = build_model(Variant.AC_DC_VI, p, TS)
    # with both secondary loops off, a DC-flow bias moves nothing
    assert min_disruptive_magnitude(m, "DcFlow12", 0.8, 500) == math.inf


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def test_trajectory_csv_layout(tmp_path, model):
    K = 50
    d = gen_load_profile(LoadStep(1, 0.03, 0.4), K, TS)
    tr = simulate(model, d)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(tr, path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    assert header[:3] == ["t", "dw1_hz", "dw2_hz"]
    assert header[3:15] == list(model.state_labels)
    assert header[15:19] == [f"y_{c}" for c in model.channel_labels]
    assert len(lines) == K + 1
    # byte-identical on rerun
    path2 = tmp_path / "traj2.csv"
    write_trajectory_csv(simulate(model, d), path2)
    assert path.read_bytes() == path2.read_bytes()
