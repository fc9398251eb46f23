"""Minimum-cardinality disruptive stealthy attack search.

Builds the linear bias-constraint set that a measurement-corruption vector
must satisfy to stay below data-quality alarms, then finds the attack with
the fewest corrupted channels that still drives the area frequency past a
grid-code threshold.  The search solves one small binary program per
(time sample, sign) on the disruptiveness grid, which is exact and fast at
this scale; an exhaustive support-enumeration oracle cross-checks it.

Attack vectors are handled in internal units (rad/s on frequency
channels); anchor values and reported per-channel magnitudes use the
outward units (Hz / p.u.).
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .gridmodel import FREQUENCY_CHANNELS, LtiModel
from .numerics import LinearProgram, MixedIntegerProgram, lp_solve, milp_solve
from . import sim as _sim

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class StealthSpec:
    """Bounds defining stealthiness plus the disruptiveness target.

    The frequency-bias window is in Hz; the control-error and DC-reference
    caps in p.u.; the impact threshold in Hz.  ``anchor_value`` of None
    means "use the smallest disruptive magnitude on the anchor channel".
    ``mode`` selects whether the bounds apply to the injected bias terms
    seen by the data-quality checks ("bias", default) or to the corrupted
    closed-loop signal trajectories themselves ("trajectory").
    """

    dw_min_hz: float = -0.1
    dw_max_hz: float = 0.1
    ace_max: float = 0.05
    pdc_ref_max: float = 0.1
    mfd_lim_hz: float = 0.8
    anchor_channel: str = "AcFlow12"
    anchor_value: float | None = None
    protected: tuple = ()
    horizon_s: float = 30.0
    stride: int = 1
    big_m: float = 10.0
    area: int = 1
    mode: str = "bias"

    def __post_init__(self):
        object.__setattr__(self, "protected", tuple(self.protected))
        if self.dw_min_hz >= self.dw_max_hz:
            raise ValueError("frequency-bias window is empty")
        if min(self.ace_max, self.pdc_ref_max, self.mfd_lim_hz) < 0:
            raise ValueError("bounds must be nonnegative")
        if self.anchor_channel in self.protected:
            raise ValueError("anchor channel cannot be protected")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        if self.mode not in ("bias", "trajectory"):
            raise ValueError("mode must be 'bias' or 'trajectory'")
        if self.area not in (1, 2):
            raise ValueError("area must be 1 or 2")


@dataclass
class StealthSet:
    """Linear bias constraints b_min <= F_f f <= b_max plus impact rows."""

    f_rows: np.ndarray     # (n_b, n_Y), internal units
    b_min: np.ndarray
    b_max: np.ndarray
    row_labels: tuple
    g: np.ndarray          # (K_h + 1, n_Y) impact coefficients, Hz per unit
    grid_ks: np.ndarray    # sample indices entering the disruptiveness check
    channels: tuple

    def bias_of(self, f_internal: np.ndarray) -> np.ndarray:
        return self.f_rows @ f_internal

    def contains(self, f_internal: np.ndarray, tol: float = 1e-9) -> bool:
        v = self.bias_of(f_internal)
        return bool(np.all(v >= self.b_min - tol) and np.all(v <= self.b_max + tol))


@dataclass
class VulnResult:
    alpha_star: float                 # channel count, or inf when infeasible
    f_star: dict | None               # channel -> outward-unit value
    k_star: int | None
    sign: int | None
    l1: float | None                  # internal-unit one-norm of f_star
    active_rows: tuple = ()
    stats: dict | None = None

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.alpha_star)


def step_response_coeffs(model: LtiModel, area: int, horizon: int) -> np.ndarray:
    """Rows g_k with Dw_area[k] = g_k @ f for a constant injection f.

    Computed by the partial-sum recursion S_{k+1} = A S_k + I, so row k is
    c_area (sum_{j<k} A^j) B_f, converted to Hz per unit injection.
    Row 0 is zero: the injection cannot act before one sample has passed.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least one sample")
    if model.a is None:
        raise ValueError("model must be discretized")
    n = model.n_states
    c_row = model.c_out[model.channel_index(f"Freq{area}")]
    s = np.zeros((n, n))
    g = np.zeros((horizon + 1, model.n_channels))
    for k in range(1, horizon + 1):
        s = model.a @ s + np.eye(n)
        g[k] = (c_row @ s @ model.b_f) / TWO_PI
    return g


def _signal_response_rows(model: LtiModel, weights: dict, horizon: int) -> np.ndarray:
    """Trajectory rows for a linear output combo w @ y_tilde under constant f.

    Includes both the state response and the direct injection feedthrough.
    """
    n = model.n_states
    w = np.zeros(model.n_channels)
    for ch, v in weights.items():
        w[model.channel_index(ch)] = v
    c_row = w @ model.c_out
    s = np.zeros((n, n))
    rows = np.zeros((horizon + 1, model.n_channels))
    rows[0] = w  # direct feedthrough of the injected bias
    for k in range(1, horizon + 1):
        s = model.a @ s + np.eye(n)
        rows[k] = c_row @ s @ model.b_f + w
    return rows


def build_stealth_set(model: LtiModel, spec: StealthSpec) -> StealthSet:
    """Assemble the bias rows and the disruptiveness grid for one model.

    In bias mode the rows constrain the attacker-injected terms entering
    the data-quality checks: the raw frequency biases, the control-error
    biases of both areas (the shared tie measurements enter area 2
    negated), and the DC-reference bias.  In trajectory mode the same
    quantities are constrained along the corrupted closed-loop response at
    every grid sample.
    """
    p = model.params
    ch = model.channel_labels
    n_y = len(ch)
    horizon = int(round(spec.horizon_s / model.t_s))
    g = step_response_coeffs(model, spec.area, horizon)
    grid = np.arange(0, horizon + 1, spec.stride)

    def unit_row(weights):
        row = np.zeros(n_y)
        for c, v in weights.items():
            if c in ch:
                row[ch.index(c)] = v
        return row

    ace1_w = {"Freq1": p.beta1 / TWO_PI, "AcFlow12": 1.0, "DcFlow12": 1.0}
    ace2_w = {"Freq2": p.beta2 / TWO_PI, "AcFlow12": -1.0, "DcFlow12": -1.0}
    pdc_w = {"Freq1": p.k1, "Freq2": p.k2, "AcFlow12": p.kac}

    rows, lo, hi, labels = [], [], [], []
    if spec.mode == "bias":
        for c in ch:
            if c in FREQUENCY_CHANNELS:
                rows.append(unit_row({c: 1.0}))
                lo.append(spec.dw_min_hz * TWO_PI)
                hi.append(spec.dw_max_hz * TWO_PI)
                labels.append(f"freq_bias_{c}")
        for name, w in (("ace1_bias", ace1_w), ("ace2_bias", ace2_w)):
            rows.append(unit_row(w))
            lo.append(-spec.ace_max)
            hi.append(spec.ace_max)
            labels.append(name)
        if "DcFlow12" in ch:
            rows.append(unit_row(pdc_w))
            lo.append(-spec.pdc_ref_max)
            hi.append(spec.pdc_ref_max)
            labels.append("pdc_ref_bias")
    else:
        combos = []
        for c in ch:
            if c in FREQUENCY_CHANNELS:
                combos.append((f"freq_traj_{c}", {c: 1.0},
                               spec.dw_min_hz * TWO_PI, spec.dw_max_hz * TWO_PI))
        combos.append(("ace1_traj", ace1_w, -spec.ace_max, spec.ace_max))
        combos.append(("ace2_traj", ace2_w, -spec.ace_max, spec.ace_max))
        if "DcFlow12" in ch:
            combos.append(("pdc_ref_traj", pdc_w, -spec.pdc_ref_max, spec.pdc_ref_max))
        for name, w, lo_v, hi_v in combos:
            resp = _signal_response_rows(model, w, horizon)
            for k in grid:
                rows.append(resp[k])
                lo.append(lo_v)
                hi.append(hi_v)
                labels.append(f"{name}[{k}]")

    return StealthSet(
        f_rows=np.array(rows), b_min=np.array(lo), b_max=np.array(hi),
        row_labels=tuple(labels), g=g, grid_ks=grid, channels=ch,
    )


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

def _internal_scale(channels):
    return np.array([TWO_PI if c in FREQUENCY_CHANNELS else 1.0 for c in channels])


def _anchor_value(model: LtiModel, spec: StealthSpec) -> float:
    if spec.anchor_value is not None:
        return float(spec.anchor_value)
    horizon = int(round(spec.horizon_s / model.t_s))
    mu = _sim.min_disruptive_magnitude(
        model, spec.anchor_channel, spec.mfd_lim_hz, horizon, area=spec.area)
    if math.isinf(mu):
        raise ValueError(
            f"anchor channel {spec.anchor_channel!r} cannot reach the impact threshold")
    return mu


def _stage_lps(ss: StealthSet, anchor_idx, mu_int, protected_idx, big_m,
               g_row, sign, mfd_lim):
    """Constraint blocks shared by the per-(k, sign) programs.

    Variables are [f, z]; returns (a_ineq, lo, hi, bounds) with the anchor
    folded into the f bounds and protected channels pinned at zero.
    """
    n_y = ss.f_rows.shape[1]
    blocks = []
    lo, hi = [], []
    # stealth rows
    blocks.append(np.hstack([ss.f_rows, np.zeros((ss.f_rows.shape[0], n_y))]))
    lo.extend(ss.b_min)
    hi.extend(ss.b_max)
    # big-M linking |f_c| <= M z_c
    eye = np.eye(n_y)
    blocks.append(np.hstack([eye, -big_m * eye]))
    lo.extend([-np.inf] * n_y)
    hi.extend([0.0] * n_y)
    blocks.append(np.hstack([-eye, -big_m * eye]))
    lo.extend([-np.inf] * n_y)
    hi.extend([0.0] * n_y)
    # disruptiveness at (k, sign)
    row = np.zeros(2 * n_y)
    row[:n_y] = sign * g_row
    blocks.append(row.reshape(1, -1))
    lo.append(mfd_lim)
    hi.append(np.inf)

    bounds = []
    for j in range(n_y):
        if j == anchor_idx:
            bounds.append((mu_int, mu_int))
        elif j in protected_idx:
            bounds.append((0.0, 0.0))
        else:
            bounds.append((-big_m, big_m))
    bounds += [(0.0, 1.0)] * n_y
    return np.vstack(blocks), np.array(lo), np.array(hi), tuple(bounds)


def _min_l1_given_support_cap(ss, anchor_idx, mu_int, protected_idx, big_m,
                              g_row, sign, mfd_lim, alpha_cap):
    """Binary program: minimize ||f||_1 with at most alpha_cap channels.

    Split representation f = fp - fm keeps the objective linear.
    """
    n_y = ss.f_rows.shape[1]
    nb = ss.f_rows.shape[0]
    split = np.hstack([ss.f_rows, -ss.f_rows, np.zeros((nb, n_y))])
    rows = [split]
    lo = list(ss.b_min)
    hi = list(ss.b_max)
    eye = np.eye(n_y)
    rows.append(np.hstack([eye, -eye, -big_m * eye]))
    lo += [-np.inf] * n_y
    hi += [0.0] * n_y
    rows.append(np.hstack([-eye, eye, -big_m * eye]))
    lo += [-np.inf] * n_y
    hi += [0.0] * n_y
    r = np.zeros(3 * n_y)
    r[:n_y] = sign * g_row
    r[n_y:2 * n_y] = -sign * g_row
    rows.append(r.reshape(1, -1))
    lo.append(mfd_lim)
    hi.append(np.inf)
    card = np.zeros(3 * n_y)
    card[2 * n_y:] = 1.0
    rows.append(card.reshape(1, -1))
    lo.append(-np.inf)
    hi.append(float(alpha_cap))

    bounds = []
    for part in range(2):
        for j in range(n_y):
            if j == anchor_idx:
                v = max(mu_int, 0.0) if part == 0 else max(-mu_int, 0.0)
                bounds.append((v, v))
            elif j in protected_idx:
                bounds.append((0.0, 0.0))
            else:
                bounds.append((0.0, big_m))
    bounds += [(0.0, 1.0)] * n_y

    c = np.zeros(3 * n_y)
    c[:2 * n_y] = 1.0
    lp = LinearProgram(c=c, sense="min", a_ineq=np.vstack(rows),
                       ineq_lower=np.array(lo), ineq_upper=np.array(hi),
                       bounds=bounds)
    res = milp_solve(MixedIntegerProgram(lp, tuple(range(2 * n_y, 3 * n_y))))
    if res.status != "optimal":
        return None
    f = res.x[:n_y] - res.x[n_y:2 * n_y]
    return f, float(res.objective)


def find_disruptive_stealthy(model: LtiModel, spec: StealthSpec) -> VulnResult:
    """Exact minimum-cardinality search via branch-and-bound programs.

    The disjunction over impact time and sign is enumerated: each grid
    sample gets a cheap LP feasibility screen, survivors get a cardinality
    program, and ties are broken by the smallest one-norm, then earliest
    sample.  Infeasibility everywhere means no disruptive stealthy attack
    exists for this model and bounds.
    """
    t0 = time.perf_counter()
    ss = build_stealth_set(model, spec)
    n_y = len(ss.channels)
    scale = _internal_scale(ss.channels)
    anchor_idx = ss.channels.index(spec.anchor_channel)
    protected_idx = {ss.channels.index(c) for c in spec.protected}
    mu_out = _anchor_value(model, spec)
    mu_int = mu_out * scale[anchor_idx]
    big_m = spec.big_m
    stats = {"lps": 0, "milps": 0}

    for attempt in range(2):
        result = _search_once(model, spec, ss, anchor_idx, protected_idx,
                              mu_int, big_m, stats)
        if result is None:
            return VulnResult(math.inf, None, None, None, None, (),
                              {**stats, "time_s": time.perf_counter() - t0,
                               "anchor_value": mu_out, "big_m": big_m})
        f_int, alpha, l1, k_star, sign = result
        if np.max(np.abs(f_int)) < big_m * (1.0 - 1e-6):
            break
        warnings.warn("attack magnitude bound was active; retrying with a larger bound")
        big_m *= 10.0
    bias = ss.bias_of(f_int)
    active = tuple(
        lab for lab, v, lo_v, hi_v in zip(ss.row_labels, bias, ss.b_min, ss.b_max)
        if min(abs(v - lo_v), abs(hi_v - v)) <= 1e-8
    )
    f_out = {c: float(f_int[j] / scale[j]) for j, c in enumerate(ss.channels)
             if abs(f_int[j]) > 1e-9}
    return VulnResult(
        alpha_star=float(alpha), f_star=f_out, k_star=int(k_star),
        sign=int(sign), l1=float(l1), active_rows=active,
        stats={**stats, "time_s": time.perf_counter() - t0,
               "anchor_value": mu_out, "big_m": big_m},
    )


def _search_once(model, spec, ss, anchor_idx, protected_idx, mu_int, big_m, stats):
    n_y = len(ss.channels)
    # screening: maximum achievable impact per (k, sign) over the stealth set
    candidates = []
    for k in ss.grid_ks:
        g_row = ss.g[k]
        for sign in (+1, -1):
            a, lo, hi, bounds = _stage_lps(ss, anchor_idx, mu_int, protected_idx,
                                           big_m, g_row, sign, -np.inf)
            c = np.zeros(2 * n_y)
            c[:n_y] = sign * g_row
            lp = LinearProgram(c=c, sense="max", a_ineq=a[:-1], ineq_lower=lo[:-1],
                               ineq_upper=hi[:-1], bounds=bounds)
            res = lp_solve(lp)
            stats["lps"] += 1
            if res.status == "optimal" and res.objective >= spec.mfd_lim_hz - 1e-12:
                candidates.append((res.objective, int(k), sign))
            elif res.status == "unbounded":  # cannot happen with finite box
                candidates.append((np.inf, int(k), sign))
    if not candidates:
        return None
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))

    best = None  # (alpha, l1, k, sign, f_int)
    for _, k, sign in candidates:
        g_row = ss.g[k]
        a, lo, hi, bounds = _stage_lps(ss, anchor_idx, mu_int, protected_idx,
                                       big_m, g_row, sign, spec.mfd_lim_hz)
        c = np.zeros(2 * n_y)
        c[n_y:] = 1.0
        lp = LinearProgram(c=c, sense="min", a_ineq=a, ineq_lower=lo,
                           ineq_upper=hi, bounds=bounds)
        cutoff = best[0] + 0.5 if best is not None else None
        res = milp_solve(MixedIntegerProgram(lp, tuple(range(n_y, 2 * n_y))), cutoff=cutoff)
        stats["milps"] += 1
        if res.status != "optimal":
            continue
        alpha = int(round(res.objective))
        if best is not None and alpha > best[0]:
            continue
        refined = _min_l1_given_support_cap(
            ss, anchor_idx, mu_int, protected_idx, big_m, g_row, sign,
            spec.mfd_lim_hz, alpha)
        stats["milps"] += 1
        if refined is None:
            continue
        f_int, l1 = refined
        key = (alpha, round(l1, 12), k, sign)
        if best is None or key < (best[0], round(best[1], 12), best[2], best[3]):
            best = (alpha, l1, k, sign, f_int)
    if best is None:
        return None
    alpha, l1, k, sign, f_int = best
    return f_int, alpha, l1, k, sign


def enumerate_oracle(model: LtiModel, spec: StealthSpec) -> VulnResult:
    """Brute-force reference: try every support pattern, smallest first.

    For each support containing the anchor (and avoiding protected
    channels) a one-norm LP runs per grid sample and sign.  The first
    support size with any feasible solution is the optimum; among that
    size the smallest one-norm, then earliest sample, wins.
    """
    import itertools

    t0 = time.perf_counter()
    ss = build_stealth_set(model, spec)
    n_y = len(ss.channels)
    if n_y > 8:
        raise ValueError("oracle is limited to eight channels")
    scale = _internal_scale(ss.channels)
    anchor_idx = ss.channels.index(spec.anchor_channel)
    protected_idx = {ss.channels.index(c) for c in spec.protected}
    mu_out = _anchor_value(model, spec)
    mu_int = mu_out * scale[anchor_idx]
    stats = {"lps": 0}

    free = [j for j in range(n_y) if j != anchor_idx and j not in protected_idx]
    for size in range(1, n_y + 1):
        hits = []
        for extra in itertools.combinations(free, size - 1):
            support = {anchor_idx, *extra}
            sol = _oracle_support_best(ss, support, anchor_idx, mu_int,
                                       spec, stats)
            if sol is not None:
                hits.append(sol)
        if hits:
            hits.sort(key=lambda t: (round(t[0], 12), t[1], t[2]))
            l1, k, sign, f_int = hits[0]
            f_out = {c: float(f_int[j] / scale[j]) for j, c in enumerate(ss.channels)
                     if abs(f_int[j]) > 1e-9}
            return VulnResult(
                alpha_star=float(size), f_star=f_out, k_star=int(k),
                sign=int(sign), l1=float(l1),
                stats={**stats, "time_s": time.perf_counter() - t0,
                       "anchor_value": mu_out},
            )
    return VulnResult(math.inf, None, None, None, None, (),
                      {**stats, "time_s": time.perf_counter() - t0,
                       "anchor_value": mu_out})


def _oracle_support_best(ss, support, anchor_idx, mu_int, spec, stats):
    """Min one-norm over the support, scanning every (k, sign); None if infeasible."""
    n_y = ss.f_rows.shape[1]
    split = np.hstack([ss.f_rows, -ss.f_rows])
    best = None
    big = spec.big_m * 10.0  # box only for boundedness; support does the work
    base_bounds = []
    for part in range(2):
        for j in range(n_y):
            if j == anchor_idx:
                v = max(mu_int, 0.0) if part == 0 else max(-mu_int, 0.0)
                base_bounds.append((v, v))
            elif j in support:
                base_bounds.append((0.0, big))
            else:
                base_bounds.append((0.0, 0.0))
    c = np.ones(2 * n_y)
    for k in ss.grid_ks:
        g_row = ss.g[k]
        for sign in (+1, -1):
            r = np.concatenate([sign * g_row, -sign * g_row])
            a = np.vstack([split, r.reshape(1, -1)])
            lo = np.concatenate([ss.b_min, [spec.mfd_lim_hz]])
            hi = np.concatenate([ss.b_max, [np.inf]])
            lp = LinearProgram(c=c, sense="min", a_ineq=a, ineq_lower=lo,
                               ineq_upper=hi, bounds=base_bounds)
            res = lp_solve(lp)
            stats["lps"] += 1
            if res.status != "optimal":
                continue
            f_int = res.x[:n_y] - res.x[n_y:]
            cand = (float(res.objective), int(k), sign, f_int)
            if best is None or (round(cand[0], 12), cand[1], cand[2]) < \
                    (round(best[0], 12), best[1], best[2]):
                best = cand
    return best
