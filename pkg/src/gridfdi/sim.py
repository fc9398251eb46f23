"""Discrete-time simulation of the (possibly attacked) closed loop.

Generates load and measurement-corruption waveforms, iterates the sampled
state recursion, derives the controller-facing signals (control errors, DC
power reference) from the corrupted measurements, and reduces trajectories
to impact metrics.

Units at this boundary: load magnitudes and flow-channel attack magnitudes
are p.u.; frequency-channel attack magnitudes are Hz and are converted to
the internal rad/s when the injection vectors are built.  Reported
frequency metrics are Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gridmodel import FREQUENCY_CHANNELS, LtiModel
from .numerics import steady_state_gain

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# scenario types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoadStep:
    area: int
    magnitude: float  # p.u.
    onset_s: float

    def __post_init__(self):
        if self.area not in (1, 2):
            raise ValueError("load area must be 1 or 2")
        if not np.isfinite(self.magnitude):
            raise ValueError("load magnitude must be finite")


@dataclass(frozen=True)
class LoadStochastic:
    """Mean-reverting (discretized Ornstein-Uhlenbeck) load wander per area."""

    rate: tuple = (1.0, 1.0)        # 1/s
    volatility: tuple = (0.01, 0.01)  # p.u. / sqrt(s)
    seed: int = 0

    def __post_init__(self):
        if any(r < 0 for r in self.rate):
            raise ValueError("mean-reversion rates must be nonnegative")


LoadProfile = LoadStep | LoadStochastic


@dataclass(frozen=True)
class Step:
    pass


@dataclass(frozen=True)
class Pulse:
    duration: int  # samples

    def __post_init__(self):
        if self.duration < 1:
            raise ValueError("pulse duration must be at least one sample")


@dataclass(frozen=True)
class Ramp:
    slope: float  # fraction of magnitude added per sample


@dataclass(frozen=True)
class Scaling:
    """Multiplicative corruption: the entry magnitude is the multiplier."""


@dataclass(frozen=True)
class Random:
    std: float
    seed: int = 0


AttackShape = Step | Pulse | Ramp | Scaling | Random


@dataclass(frozen=True)
class AttackScenario:
    """Measurement corruption on one or more channels from sample k_min on.

    ``entries`` maps channel label to magnitude (p.u. for flow channels, Hz
    for frequency channels; for Scaling the magnitude is the multiplier on
    the true output).  All entries share one waveform shape and onset.
    """

    entries: tuple  # ((channel, magnitude), ...)
    k_min: int
    shape: AttackShape = Step()

    def __post_init__(self):
        entries = tuple((str(c), float(m)) for c, m in self.entries)
        object.__setattr__(self, "entries", entries)
        if self.k_min < 0:
            raise ValueError("attack onset must be nonnegative")
        labels = [c for c, _ in entries]
        if len(set(labels)) != len(labels):
            raise ValueError("attack channels must be unique")


@dataclass(frozen=True)
class NoiseSpec:
    """Process/measurement noise hooks.

    ``freq_state_cov`` is read in Hz^2 and applied to the frequency states
    as variance * (2*pi)^2 in rad^2/s^2; ``other_state_cov`` applies as-is
    to every remaining state.  Both are per-state, per-step variances of
    additive zero-mean Gaussian process noise.  Measurement hooks default
    to off.
    """

    enabled: bool = False
    freq_state_cov: float = 0.0009
    other_state_cov: float = 0.03
    meas_freq_cov: float = 0.0
    meas_flow_cov: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("freq_state_cov", "other_state_cov", "meas_freq_cov", "meas_flow_cov"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class Trajectory:
    t_s: float
    x: np.ndarray        # (K, n_states)
    y: np.ndarray        # (K, n_channels) true outputs, internal units
    y_tilde: np.ndarray  # corrupted outputs seen by the control center
    d: np.ndarray        # (K, 2)
    f: np.ndarray        # effective additive injection (internal units)
    ace1: np.ndarray
    ace2: np.ndarray
    pdc_ref: np.ndarray
    state_labels: tuple
    channel_labels: tuple

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.t_s

    def freq_hz(self, area: int) -> np.ndarray:
        return self.x[:, self.state_labels.index(f"dw{area}")] / TWO_PI

    def to_csv(self, path) -> None:
        write_trajectory_csv(self, path)


@dataclass(frozen=True)
class ImpactMetrics:
    mfd_hz: dict          # area -> (signed extremum in Hz, time s)
    ssfd_hz: dict         # area -> Hz
    ace_peak: dict        # area -> p.u.
    pdc_ref_peak: float   # p.u.
    coi_mfd_hz: tuple = (0.0, 0.0)


# ---------------------------------------------------------------------------
# waveform generation
# ---------------------------------------------------------------------------

def gen_load_profile(profile: LoadProfile, horizon: int, t_s: float) -> np.ndarray:
    """Per-sample load disturbance, shape (horizon, 2)."""
    if horizon < 1:
        raise ValueError("horizon must be at least one sample")
    d = np.zeros((horizon, 2))
    if isinstance(profile, LoadStep):
        onset = int(round(profile.onset_s / t_s))
        if onset < horizon:
            d[onset:, profile.area - 1] = profile.magnitude
    elif isinstance(profile, LoadStochastic):
        rng = np.random.default_rng(profile.seed)
        state = np.zeros(2)
        rate = np.asarray(profile.rate)
        vol = np.asarray(profile.volatility)
        sq = math.sqrt(t_s)
        for k in range(horizon):
            state = state - rate * state * t_s + vol * sq * rng.standard_normal(2)
            d[k] = state
    else:
        raise TypeError(f"unknown load profile {profile!r}")
    return d


def _shape_profile(shape: AttackShape, horizon: int, k_min: int, rng_channels):
    """Per-sample multiplier on the magnitude for additive shapes."""
    prof = np.zeros(horizon)
    if isinstance(shape, Step):
        prof[k_min:] = 1.0
    elif isinstance(shape, Pulse):
        prof[k_min:min(k_min + shape.duration, horizon)] = 1.0
    elif isinstance(shape, Ramp):
        idx = np.arange(horizon)
        prof[k_min:] = shape.slope * (idx[k_min:] - k_min)
    else:
        raise TypeError(f"not an additive shape: {shape!r}")
    return prof


def gen_attack_signal(scenario: AttackScenario, horizon: int, model: LtiModel):
    """Expand a scenario into (additive injection, multiplicative mask).

    The additive part is in internal units (rad/s on frequency channels);
    the mask defaults to 1 and carries Scaling corruptions, which are
    applied to the true output inside :func:`simulate`.
    """
    n_y = model.n_channels
    f = np.zeros((horizon, n_y))
    mask = np.ones((horizon, n_y))
    for channel, magnitude in scenario.entries:
        if channel not in model.channel_labels:
            raise ValueError(f"unknown channel {channel!r} for variant {model.variant.value}")
        j = model.channel_index(channel)
        internal = magnitude * (TWO_PI if channel in FREQUENCY_CHANNELS else 1.0)
        if isinstance(scenario.shape, Scaling):
            mask[scenario.k_min:, j] = magnitude  # multiplier, unit-free
        elif isinstance(scenario.shape, Random):
            rng = np.random.default_rng(scenario.shape.seed)
            noise = rng.normal(0.0, scenario.shape.std, size=horizon - scenario.k_min)
            f[scenario.k_min:, j] = internal * noise
        else:
            f[:, j] = internal * _shape_profile(scenario.shape, horizon, scenario.k_min, None)
    return f, mask


def combine_attacks(scenarios, horizon: int, model: LtiModel):
    """Sum additive injections and merge scaling masks across scenarios.

    A channel may carry either additive or scaling corruption, not both.
    """
    f = np.zeros((horizon, model.n_channels))
    mask = np.ones((horizon, model.n_channels))
    for sc in scenarios:
        fi, mi = gen_attack_signal(sc, horizon, model)
        add = np.any(fi != 0.0, axis=0)
        scaled = np.any(mi != 1.0, axis=0)
        prev_add = np.any(f != 0.0, axis=0)
        prev_scaled = np.any(mask != 1.0, axis=0)
        conflict = (add & prev_scaled) | (scaled & prev_add) | (add & scaled)
        if np.any(conflict):
            bad = [model.channel_labels[j] for j in np.flatnonzero(conflict)]
            raise ValueError(f"channel(s) {bad} mix scaling and additive corruption")
        f += fi
        mask *= mi
    return f, mask


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def simulate(model: LtiModel, d: np.ndarray, f: np.ndarray | None = None,
             noise: NoiseSpec | None = None,
             scale_mask: np.ndarray | None = None) -> Trajectory:
    """Iterate the sampled closed loop from rest.

    ``d`` is (K, 2); ``f`` is the additive injection (K, n_channels) in
    internal units; ``scale_mask`` multiplies the true output before the
    controllers see it.  Scaling corruption is folded into an equivalent
    additive injection (mask - 1) * y[k], so the stored trajectory always
    satisfies y_tilde = y + f.
    """
    if model.a is None:
        raise ValueError("model must be discretized before simulation")
    d = np.atleast_2d(np.asarray(d, dtype=float))
    K = d.shape[0]
    n, n_y = model.n_states, model.n_channels
    if d.shape[1] != model.b_d.shape[1]:
        raise ValueError("disturbance series has wrong width")
    if f is None:
        f = np.zeros((K, n_y))
    f = np.asarray(f, dtype=float)
    if f.shape != (K, n_y):
        raise ValueError("attack series has wrong shape")
    if scale_mask is not None and scale_mask.shape != (K, n_y):
        raise ValueError("scale mask has wrong shape")

    rng = None
    w_std = None
    v_std = None
    if noise is not None and noise.enabled:
        rng = np.random.default_rng(noise.seed)
        freq_states = np.array([lab.startswith("dw") for lab in model.state_labels])
        w_std = np.where(freq_states,
                         math.sqrt(noise.freq_state_cov) * TWO_PI,
                         math.sqrt(noise.other_state_cov))
        freq_ch = model.frequency_channel_mask
        v_std = np.where(freq_ch,
                         math.sqrt(noise.meas_freq_cov) * TWO_PI,
                         math.sqrt(noise.meas_flow_cov))
        if not np.any(v_std > 0):
            v_std = None

    a, b_d, b_f, c = model.a, model.b_d, model.b_f, model.c_out
    x = np.zeros(n)
    xs = np.zeros((K, n))
    ys = np.zeros((K, n_y))
    f_eff = np.zeros((K, n_y))
    for k in range(K):
        xs[k] = x
        y = c @ x
        ys[k] = y
        fk = f[k].copy()
        if scale_mask is not None:
            fk += (scale_mask[k] - 1.0) * y
        if v_std is not None:
            fk += rng.normal(0.0, 1.0, n_y) * v_std
        f_eff[k] = fk
        x = a @ x + b_d @ d[k] + b_f @ fk
        if w_std is not None:
            x = x + rng.normal(0.0, 1.0, n) * w_std

    y_tilde = ys + f_eff
    p = model.params
    freq_idx = [model.channel_index("Freq1"), model.channel_index("Freq2")]
    ac = y_tilde[:, model.channel_index("AcFlow12")]
    dc = (y_tilde[:, model.channel_index("DcFlow12")]
          if "DcFlow12" in model.channel_labels else np.zeros(K))
    tie = ac + dc
    ace1 = p.beta1 / TWO_PI * y_tilde[:, freq_idx[0]] + tie
    ace2 = p.beta2 / TWO_PI * y_tilde[:, freq_idx[1]] - tie
    pdc_ref = (p.k1 * y_tilde[:, freq_idx[0]] + p.k2 * y_tilde[:, freq_idx[1]]
               + p.kac * ac) if "DcFlow12" in model.channel_labels else np.zeros(K)

    return Trajectory(
        t_s=model.t_s, x=xs, y=ys, y_tilde=y_tilde, d=d, f=f_eff,
        ace1=ace1, ace2=ace2, pdc_ref=pdc_ref,
        state_labels=model.state_labels, channel_labels=model.channel_labels,
    )


def compute_metrics(traj: Trajectory, window_start: int = 0) -> ImpactMetrics:
    """Reduce a trajectory to its impact indices over [window_start, end].

    The per-area frequency index is the signed extremum (value of largest
    magnitude); the steady-state value is the mean of the last 5 % of
    samples.  Peaks of the corrupted control signals come along for
    stealth-margin inspection.
    """
    K = traj.n_samples
    if not (0 <= window_start < K):
        raise ValueError("window start outside trajectory")
    sl = slice(window_start, K)
    tail = slice(max(K - max(K // 20, 1), window_start), K)
    mfd, ssfd = {}, {}
    for area in (1, 2):
        w = traj.freq_hz(area)[sl]
        i = int(np.argmax(np.abs(w)))
        mfd[area] = (float(w[i]), float((window_start + i) * traj.t_s))
        ssfd[area] = float(np.mean(traj.freq_hz(area)[tail]))
    w1 = traj.freq_hz(1)[sl]
    w2 = traj.freq_hz(2)[sl]
    coi = 0.5 * (w1 + w2)
    j = int(np.argmax(np.abs(coi)))
    return ImpactMetrics(
        mfd_hz=mfd,
        ssfd_hz=ssfd,
        ace_peak={1: float(np.max(np.abs(traj.ace1[sl]))),
                  2: float(np.max(np.abs(traj.ace2[sl])))},
        pdc_ref_peak=float(np.max(np.abs(traj.pdc_ref[sl]))),
        coi_mfd_hz=(float(coi[j]), float((window_start + j) * traj.t_s)),
    )


def unit_step_response(model: LtiModel, channel: str, horizon: int) -> Trajectory:
    """Response to a unit step injection on one channel from sample 0.

    Unit means one p.u. on flow channels and one rad/s on frequency
    channels (callers working in Hz scale by 2*pi themselves).
    """
    f = np.zeros((horizon, model.n_channels))
    f[:, model.channel_index(channel)] = 1.0
    return simulate(model, np.zeros((horizon, 2)), f)


def min_disruptive_magnitude(model: LtiModel, channel: str, mfd_lim_hz: float,
                             horizon: int, area: int = 1,
                             method: str = "linearity") -> float:
    """Smallest step magnitude whose frequency impact reaches mfd_lim_hz.

    Linearity makes one unit simulation sufficient: the extremum scales
    with the injected magnitude.  A bisection cross-check (to 1e-4) is
    available for validation.  Returns the magnitude in the channel's
    outward unit (p.u. or Hz) and inf if the channel cannot move the
    area frequency at all.
    """
    if mfd_lim_hz < 0:
        raise ValueError("threshold must be nonnegative")
    if mfd_lim_hz == 0:
        return 0.0
    traj = unit_step_response(model, channel, horizon)
    peak = float(np.max(np.abs(traj.freq_hz(area))))
    unit_scale = TWO_PI if channel in FREQUENCY_CHANNELS else 1.0
    if peak == 0.0:
        return math.inf
    exact = mfd_lim_hz / (peak * unit_scale)
    if method == "linearity":
        return exact
    if method == "bisect":
        lo, hi = 0.0, max(2.0 * exact, 1e-6)
        while _peak_at(model, channel, hi, horizon, area) < mfd_lim_hz:
            hi *= 2.0
            if hi > 1e9:
                return math.inf
        while hi - lo > 1e-4:
            mid = 0.5 * (lo + hi)
            if _peak_at(model, channel, mid, horizon, area) >= mfd_lim_hz:
                hi = mid
            else:
                lo = mid
        return hi
    raise ValueError(f"unknown method {method!r}")


def _peak_at(model, channel, magnitude, horizon, area):
    scenario = AttackScenario(entries=((channel, magnitude),), k_min=0)
    f, _ = gen_attack_signal(scenario, horizon, model)
    traj = simulate(model, np.zeros((horizon, 2)), f)
    return float(np.max(np.abs(traj.freq_hz(area))))


def steady_state_offset_hz(model: LtiModel, d_const: np.ndarray, area: int = 1) -> float:
    """DC-gain prediction of the settled frequency offset for a constant load."""
    gain = steady_state_gain(model.a, model.b_d, model.c_out)
    y_inf = gain @ np.asarray(d_const, dtype=float)
    return float(y_inf[model.channel_index(f"Freq{area}")] / TWO_PI)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def write_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per sample; fixed column order, deterministic formatting."""
    cols = ["t", "dw1_hz", "dw2_hz"]
    cols += list(traj.state_labels)
    cols += [f"y_{c}" for c in traj.channel_labels]
    cols += [f"ytilde_{c}" for c in traj.channel_labels]
    cols += ["ace1", "ace2", "pdc_ref"]
    cols += [f"f_{c}" for c in traj.channel_labels]
    t = traj.time
    data = np.column_stack([
        t, traj.freq_hz(1), traj.freq_hz(2), traj.x, traj.y, traj.y_tilde,
        traj.ace1, traj.ace2, traj.pdc_ref, traj.f,
    ])
    _write_csv(path, cols, data)


def _write_csv(path, header, data) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")
