"""Dense linear-algebra and optimization kernels shared by the toolkit.

Matrix exponential / zero-order-hold discretization, steady-state gains,
numeric rank and left-nullspace extraction, plus a self-contained two-phase
simplex and a binary branch-and-bound solver.  All routines are
deterministic: identical inputs give identical outputs, which the tests and
the attack-search code rely on.

The LP/MILP solver is intentionally in-repo: problems in this package are
desk scale (well under ~200 variables) and deterministic pivoting makes
solver output reproducible down to the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm as _expm


class MarginallyStableModelError(ValueError):
    """(I - A) is numerically singular, so no finite DC gain exists."""


# ---------------------------------------------------------------------------
# matrix kernels
# ---------------------------------------------------------------------------

def _as_matrix(m, name="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must be a 2-d array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def mat_exp(m: np.ndarray) -> np.ndarray:
    """Matrix exponential e^M of a square matrix.

    Backed by the scaling-and-squaring Pade kernel; entrywise relative
    accuracy is far below 1e-12 for the well-conditioned matrices this
    package produces.
    """
    m = _as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"mat_exp needs a square matrix, got {m.shape}")
    return _expm(m)


def zoh_discretize(a_c: np.ndarray, b_c: np.ndarray, t_s: float):
    """Zero-order-hold discretization of x' = A_c x + B_c u at period t_s.

    Returns (A, B) with A = e^{A_c t_s} and B the held-input integral.  Both
    blocks come out of a single matrix exponential of the augmented matrix
    [[A_c, B_c], [0, 0]] * t_s, which is exact for LTI systems.
    """
    a_c = _as_matrix(a_c, "a_c")
    b_c = _as_matrix(b_c, "b_c")
    n = a_c.shape[0]
    if a_c.shape[1] != n:
        raise ValueError(f"a_c must be square, got {a_c.shape}")
    if b_c.shape[0] != n:
        raise ValueError(f"b_c has {b_c.shape[0]} rows, expected {n}")
    if not (t_s > 0.0):
        raise ValueError(f"sampling period must be positive, got {t_s}")
    m = b_c.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a_c
    aug[:n, n:] = b_c
    phi = mat_exp(aug * t_s)
    return phi[:n, :n], phi[:n, n:]


def steady_state_gain(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """DC gain C (I - A)^-1 B of a discrete-time model."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    c = _as_matrix(c, "c")
    eye_m_a = np.eye(a.shape[0]) - a
    if numeric_rank(eye_m_a) < a.shape[0]:
        raise MarginallyStableModelError(
            "I - A is singular: the model has a pole at z = 1 and no steady-state gain"
        )
    return c @ np.linalg.solve(eye_m_a, b)


def numeric_rank(m: np.ndarray, tol: float = 1e-9) -> int:
    """Rank as the number of singular values above tol * sigma_max."""
    m = np.asarray(m)
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] <= 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def left_nullspace(m: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis (as rows) of {r : r @ m = 0}.

    Row count equals rows(m) - numeric_rank(m); each basis row r satisfies
    ||r m||_inf <= tol * ||m||_inf up to round-off.
    """
    m = np.asarray(m)
    u, s, _ = np.linalg.svd(m)
    if s.size and s[0] > 0.0:
        rank = int(np.sum(s > tol * s[0]))
    else:
        rank = 0
    return u[:, rank:].conj().T


# ---------------------------------------------------------------------------
# linear programs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearProgram:
    """min/max c @ x subject to a_eq x = b_eq, lb <= a_ineq x <= ub, bounds.

    ``bounds`` is one (low, high) pair per variable; None means unbounded on
    that side.  Omitted bounds default to (0, None).  Inequality rows are
    two-sided ranges; use -inf / +inf (or None entries) to drop a side.
    """

    c: np.ndarray
    sense: str = "min"
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_ineq: np.ndarray | None = None
    ineq_lower: np.ndarray | None = None
    ineq_upper: np.ndarray | None = None
    bounds: tuple | None = None

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        object.__setattr__(self, "c", c)
        n = c.size
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        if self.a_eq is not None:
            a = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
            b = np.atleast_1d(np.asarray(self.b_eq, dtype=float))
            if a.shape[1] != n or a.shape[0] != b.size:
                raise ValueError("equality block dimensions are inconsistent")
            object.__setattr__(self, "a_eq", a)
            object.__setattr__(self, "b_eq", b)
        if self.a_ineq is not None:
            a = np.atleast_2d(np.asarray(self.a_ineq, dtype=float))
            lo = self._side(self.ineq_lower, a.shape[0], -np.inf)
            hi = self._side(self.ineq_upper, a.shape[0], np.inf)
            if a.shape[1] != n:
                raise ValueError("inequality block has wrong column count")
            both = np.isfinite(lo) & np.isfinite(hi)
            if np.any(lo[both] > hi[both]):
                raise ValueError("inequality row has lower bound above upper bound")
            object.__setattr__(self, "a_ineq", a)
            object.__setattr__(self, "ineq_lower", lo)
            object.__setattr__(self, "ineq_upper", hi)
        if self.bounds is not None:
            bnds = tuple(
                (
                    -np.inf if lo is None else float(lo),
                    np.inf if hi is None else float(hi),
                )
                for lo, hi in self.bounds
            )
            if len(bnds) != n:
                raise ValueError("bounds length must match variable count")
            object.__setattr__(self, "bounds", bnds)

    @staticmethod
    def _side(v, m, default):
        if v is None:
            return np.full(m, default)
        v = np.atleast_1d(np.asarray(v, dtype=float))
        v = np.where(np.isnan(v), default, v)
        if v.size != m:
            raise ValueError("inequality bound vector has wrong length")
        return v


@dataclass(frozen=True)
class MixedIntegerProgram:
    """A LinearProgram plus a set of variable indices restricted to {0, 1}."""

    base: LinearProgram
    binary: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.binary)
        n = self.base.c.size
        if any(i < 0 or i >= n for i in idx):
            raise ValueError("binary index out of range")
        object.__setattr__(self, "binary", idx)


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0


@dataclass
class MilpResult:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    nodes: int = 0


_PIVOT_TOL = 1e-9
_COST_TOL = 1e-9
_PHASE1_TOL = 1e-7
_STALL_LIMIT = 200


def _simplex(tableau, basis, n_real, allowed):
    """Primal simplex on an in-place tableau.

    ``tableau`` is (m+1) x (n_cols+1): constraint rows [A | b] with b >= 0
    maintained throughout, last row the objective with reduced costs.
    Dantzig pricing with a permanent switch to Bland's rule after a stall,
    which guarantees termination on degenerate problems.
    """
    m = tableau.shape[0] - 1
    bland = False
    stall = 0
    last_obj = tableau[-1, -1]
    iters = 0
    max_iters = 2000 + 200 * (m + n_real)
    while True:
        iters += 1
        if iters > max_iters:
            raise RuntimeError("simplex iteration limit exceeded")
        costs = tableau[-1, :-1]
        if bland:
            enter = -1
            for j in range(costs.size):
                if allowed[j] and costs[j] < -_COST_TOL:
                    enter = j
                    break
        else:
            masked = np.where(allowed, costs, np.inf)
            enter = int(np.argmin(masked))
            if masked[enter] >= -_COST_TOL:
                enter = -1
        if enter < 0:
            return iters  # optimal for this phase
        col = tableau[:-1, enter]
        pos = col > _PIVOT_TOL
        if not np.any(pos):
            return -iters  # unbounded direction
        ratios = np.full(m, np.inf)
        ratios[pos] = tableau[:-1, -1][pos] / col[pos]
        best = np.min(ratios)
        ties = np.flatnonzero(ratios <= best + 1e-12)
        # lowest basic-variable index among ties (deterministic, Bland-safe)
        leave = int(min(ties, key=lambda i: basis[i]))
        _pivot(tableau, leave, enter)
        basis[leave] = enter
        obj = tableau[-1, -1]
        if obj > last_obj + 1e-12:
            stall = 0
            last_obj = obj
        else:
            stall += 1
            if stall > _STALL_LIMIT:
                bland = True


def _pivot(tableau, row, col):
    piv = tableau[row, col]
    tableau[row] /= piv
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    tableau[:, col] = 0.0
    tableau[row, col] = 1.0


def lp_solve(lp: LinearProgram) -> LpResult:
    """Solve a LinearProgram with a deterministic two-phase simplex."""
    n = lp.c.size
    sense_mul = 1.0 if lp.sense == "min" else -1.0
    bounds = lp.bounds if lp.bounds is not None else ((0.0, np.inf),) * n

    # variable transform x = off + S y, y >= 0
    offsets = np.zeros(n)
    col_var = []  # (original index, sign)
    upper_rows = []  # (transformed column, rhs) for boxed variables
    for j, (lo, hi) in enumerate(bounds):
        if lo > hi:
            return LpResult("infeasible")
        if np.isfinite(lo):
            offsets[j] = lo
            col_var.append((j, 1.0))
            if np.isfinite(hi):
                upper_rows.append((len(col_var) - 1, hi - lo))
        elif np.isfinite(hi):
            offsets[j] = hi
            col_var.append((j, -1.0))
        else:
            col_var.append((j, 1.0))
            col_var.append((j, -1.0))
    n_y = len(col_var)
    s_map = np.zeros((n, n_y))
    for k, (j, sgn) in enumerate(col_var):
        s_map[j, k] = sgn

    eq_rows, eq_rhs = [], []
    le_rows, le_rhs = [], []
    if lp.a_eq is not None:
        a_t = lp.a_eq @ s_map
        b_t = lp.b_eq - lp.a_eq @ offsets
        eq_rows.extend(a_t)
        eq_rhs.extend(b_t)
    if lp.a_ineq is not None:
        a_t = lp.a_ineq @ s_map
        shift = lp.a_ineq @ offsets
        for i in range(a_t.shape[0]):
            hi = lp.ineq_upper[i]
            lo = lp.ineq_lower[i]
            if np.isfinite(hi):
                le_rows.append(a_t[i])
                le_rhs.append(hi - shift[i])
            if np.isfinite(lo):
                le_rows.append(-a_t[i])
                le_rhs.append(-(lo - shift[i]))
    for k, ub in upper_rows:
        row = np.zeros(n_y)
        row[k] = 1.0
        le_rows.append(row)
        le_rhs.append(ub)

    m_eq, m_le = len(eq_rows), len(le_rows)
    m = m_eq + m_le
    if n_y == 0:
        # all variables fixed by their bounds
        x = offsets
        feas = True
        if lp.a_eq is not None:
            feas &= bool(np.all(np.abs(lp.a_eq @ x - lp.b_eq) <= 1e-9))
        if lp.a_ineq is not None:
            v = lp.a_ineq @ x
            feas &= bool(np.all(v <= lp.ineq_upper + 1e-9))
            feas &= bool(np.all(v >= lp.ineq_lower - 1e-9))
        return LpResult("optimal", x, float(lp.c @ x)) if feas else LpResult("infeasible")

    a_std = np.zeros((m, n_y + m_le))
    b_std = np.zeros(m)
    for i in range(m_eq):
        a_std[i, :n_y] = eq_rows[i]
        b_std[i] = eq_rhs[i]
    for i in range(m_le):
        a_std[m_eq + i, :n_y] = le_rows[i]
        a_std[m_eq + i, n_y + i] = 1.0
        b_std[m_eq + i] = le_rhs[i]
    neg = b_std < 0
    a_std[neg] *= -1.0
    b_std[neg] *= -1.0

    n_cols = a_std.shape[1]
    c_y = s_map.T @ (sense_mul * lp.c)
    c_std = np.concatenate([c_y, np.zeros(m_le)])

    # phase 1: artificial variables form the starting basis.
    # Objective row convention throughout: [reduced costs | -z], entering
    # column has reduced cost < 0, so tableau[-1, -1] rises monotonically.
    m_art = m
    tableau = np.zeros((m + 1, n_cols + m_art + 1))
    tableau[:m, :n_cols] = a_std
    tableau[:m, n_cols:n_cols + m_art] = np.eye(m)
    tableau[:m, -1] = b_std
    tableau[-1, n_cols:n_cols + m_art] = 1.0
    tableau[-1] -= tableau[:m].sum(axis=0)
    basis = list(range(n_cols, n_cols + m_art))
    allowed = np.zeros(n_cols + m_art, dtype=bool)
    allowed[:n_cols] = True  # artificials may leave but never re-enter
    total_iters = abs(_simplex(tableau, basis, n_cols, allowed))
    if tableau[-1, -1] < -_PHASE1_TOL:
        return LpResult("infeasible", iterations=total_iters)

    # drive artificials out of the basis; drop redundant rows
    drop_rows = []
    for i in range(m):
        if basis[i] >= n_cols:
            row = tableau[i, :n_cols]
            piv_candidates = np.flatnonzero(np.abs(row) > _PIVOT_TOL)
            if piv_candidates.size:
                _pivot(tableau, i, int(piv_candidates[0]))
                basis[i] = int(piv_candidates[0])
            else:
                drop_rows.append(i)
    if drop_rows:
        keep = [i for i in range(m) if i not in drop_rows]
        tableau = tableau[keep + [m]]
        basis = [basis[i] for i in keep]
        m = len(keep)

    # phase 2
    tableau = np.delete(tableau, np.s_[n_cols:n_cols + m_art], axis=1)
    tableau[-1, :] = 0.0
    tableau[-1, :n_cols] = c_std
    for i in range(m):
        tableau[-1] -= c_std[basis[i]] * tableau[i]
    allowed = np.ones(n_cols, dtype=bool)
    res = _simplex(tableau, basis, n_cols, allowed)
    total_iters += abs(res)
    if res < 0:
        return LpResult("unbounded", iterations=total_iters)

    y = np.zeros(n_cols)
    for i in range(m):
        if basis[i] < n_cols:
            y[basis[i]] = tableau[i, -1]
    x = offsets + s_map @ y[:n_y]
    return LpResult("optimal", x, float(lp.c @ x), total_iters)


def milp_solve(mip: MixedIntegerProgram, cutoff: float | None = None) -> MilpResult:
    """Exact branch-and-bound for LPs with binary variables.

    Depth-first search, branching on the lowest-index fractional binary with
    the 0-branch explored first; LP relaxations come from lp_solve, so the
    whole search is deterministic.  ``cutoff`` prunes nodes whose relaxation
    bound is worse than the supplied objective (in the problem's own sense).
    """
    lp = mip.base
    n = lp.c.size
    sense_mul = 1.0 if lp.sense == "min" else -1.0
    base_bounds = list(lp.bounds if lp.bounds is not None else ((0.0, np.inf),) * n)
    for j in mip.binary:
        lo, hi = base_bounds[j]
        base_bounds[j] = (max(lo, 0.0), min(hi, 1.0))

    best_x = None
    best_obj = np.inf  # in minimized units
    nodes = 0
    cut = sense_mul * cutoff if cutoff is not None else np.inf

    stack = [dict()]
    saw_unbounded = False
    while stack:
        fixing = stack.pop()
        nodes += 1
        bnds = list(base_bounds)
        for j, v in fixing.items():
            bnds[j] = (float(v), float(v))
        node_lp = LinearProgram(
            c=lp.c,
            sense=lp.sense,
            a_eq=lp.a_eq,
            b_eq=lp.b_eq,
            a_ineq=lp.a_ineq,
            ineq_lower=lp.ineq_lower,
            ineq_upper=lp.ineq_upper,
            bounds=tuple(bnds),
        )
        rel = lp_solve(node_lp)
        if rel.status == "infeasible":
            continue
        if rel.status == "unbounded":
            saw_unbounded = True
            continue
        bound = sense_mul * rel.objective
        if bound >= min(best_obj, cut) - 1e-9:
            continue
        frac = [
            j for j in mip.binary
            if j not in fixing and abs(rel.x[j] - round(rel.x[j])) > 1e-6
        ]
        if not frac:
            if bound < best_obj - 1e-9:
                best_obj = bound
                best_x = rel.x.copy()
                for j in mip.binary:
                    best_x[j] = round(best_x[j])
            continue
        j = frac[0]
        stack.append({**fixing, j: 1})
        stack.append({**fixing, j: 0})

    if best_x is None:
        return MilpResult("unbounded" if saw_unbounded else "infeasible", nodes=nodes)
    return MilpResult("optimal", best_x, sense_mul * best_obj, nodes)
