"""Self-contained LP and MILP solver.

Primal simplex (two-phase, bounded variables, revised form with an explicit
basis inverse) with dual extraction and Farkas infeasibility certificates,
plus a best-bound branch-and-bound layer for binary programs.  Everything is
dense float64 internally; the input format is sparse row-major.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass

import numpy as np

LE = "<="
EQ = "="
GE = ">="

_FEAS_TOL = 1e-9
_OPT_TOL = 1e-9
_PIVOT_TOL = 1e-11
_RATIO_TOL = 1e-9       # admission threshold for ratio-test pivots
_DEGEN_LIMIT = 50       # consecutive degenerate pivots before Bland's rule
_REFACTOR_EVERY = 100
_MAX_ITER = 200_000


class SolverError(Exception):
    pass


class DimensionMismatch(SolverError):
    pass


class NumericalBreakdown(SolverError):
    """Pivot selection failed: no candidate pivot above 1e-11."""


class NodeLimitExceeded(SolverError):
    """Branch and bound ran out of nodes; carries the best outcome so far."""

    def __init__(self, outcome):
        super().__init__("branch-and-bound node limit reached")
        self.outcome = outcome


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    """Standard-form minimization LP.

    Rows are sparse: ``rows[i]`` is a list of ``(var_index, coefficient)``
    pairs.  Bounds may be ``+-inf``.  ``names`` is optional and only used for
    diagnostics and the text dump.
    """

    cost: np.ndarray
    rows: list
    senses: list
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: list | None = None
    objective_constant: float = 0.0

    @property
    def n_vars(self) -> int:
        return len(self.cost)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def validate(self):
        n, m = self.n_vars, self.n_rows
        if not (len(self.senses) == len(self.rhs) == m):
            raise DimensionMismatch(
                f"rows={m}, senses={len(self.senses)}, rhs={len(self.rhs)}")
        if not (len(self.lower) == len(self.upper) == n):
            raise DimensionMismatch("bound arrays do not match cost length")
        for i, row in enumerate(self.rows):
            for j, v in row:
                if not (0 <= j < n):
                    raise DimensionMismatch(f"row {i}: variable index {j} out of range")
                if not np.isfinite(v):
                    raise DimensionMismatch(f"row {i}: non-finite coefficient")
        if not np.all(np.isfinite(self.cost)):
            raise DimensionMismatch("non-finite objective coefficient")
        if not np.all(np.isfinite(self.rhs)):
            raise DimensionMismatch("non-finite rhs")
        if np.any(self.lower > self.upper + 1e-12):
            bad = int(np.argmax(self.lower > self.upper + 1e-12))
            raise DimensionMismatch(f"variable {bad}: lower bound above upper bound")
        for s in self.senses:
            if s not in (LE, EQ, GE):
                raise DimensionMismatch(f"unknown row sense {s!r}")

    def dense_matrix(self) -> np.ndarray:
        a = np.zeros((self.n_rows, self.n_vars))
        for i, row in enumerate(self.rows):
            for j, v in row:
                a[i, j] += v
        return a


@dataclass
class FarkasCertificate:
    """Proof of infeasibility extracted from the phase-1 optimum.

    ``row_duals`` follow the d(objective)/d(rhs) sign convention (<= rows
    nonpositive, >= rows nonnegative).  ``row_weights`` restate the same
    multipliers for <=-normalized rows, so they are nonnegative on every
    inequality and combine the rows into a single violated inequality.
    ``bound_multipliers`` are the phase-1 reduced costs of the original
    variables: positive parts price lower bounds, negative parts upper
    bounds, so the infeasibility measure responds to a bound change b at rate
    max(mult, 0) (lower) or min(mult, 0) (upper).  ``infeasibility`` is the
    phase-1 objective (> 0).
    """

    row_duals: np.ndarray
    row_weights: np.ndarray
    bound_multipliers: np.ndarray
    infeasibility: float


@dataclass
class Basis:
    """Simplex basis snapshot for warm starts (canonical column indices)."""

    basic: np.ndarray
    at_upper: np.ndarray


@dataclass
class LpOutcome:
    status: LpStatus
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    objective: float | None = None
    farkas: FarkasCertificate | None = None
    basis: Basis | None = None
    iterations: int = 0


# ---------------------------------------------------------------------------
# canonical equality form


class _Canonical:
    """min c x, A x = b, 0 <= x <= ub built from a LinearProgram.

    Variables with a finite lower bound are shifted, lower-unbounded ones
    with a finite upper bound are mirrored, free ones are split.  Inequality
    rows get a slack column.
    """

    SHIFT, MIRROR, SPLIT = 0, 1, 2

    def __init__(self, lp: LinearProgram):
        n, m = lp.n_vars, lp.n_rows
        self.lp = lp
        self.a_orig = lp.dense_matrix()
        kinds = np.empty(n, dtype=np.int8)
        col_of = np.empty(n, dtype=np.int64)
        ncan = 0
        for j in range(n):
            lo, up = lp.lower[j], lp.upper[j]
            if np.isfinite(lo):
                kinds[j] = self.SHIFT
            elif np.isfinite(up):
                kinds[j] = self.MIRROR
            else:
                kinds[j] = self.SPLIT
            col_of[j] = ncan
            ncan += 2 if kinds[j] == self.SPLIT else 1
        self.kinds, self.col_of = kinds, col_of

        nslack = sum(1 for s in lp.senses if s != EQ)
        ntot = ncan + nslack
        a = np.zeros((m, ntot))
        ub = np.full(ntot, np.inf)
        c = np.zeros(ntot)
        b = lp.rhs.astype(float).copy()
        for j in range(n):
            lo, up = lp.lower[j], lp.upper[j]
            k = col_of[j]
            if kinds[j] == self.SHIFT:
                a[:, k] = self.a_orig[:, j]
                c[k] = lp.cost[j]
                if np.isfinite(up):
                    ub[k] = up - lo
                if lo != 0.0:
                    b -= self.a_orig[:, j] * lo
            elif kinds[j] == self.MIRROR:
                a[:, k] = -self.a_orig[:, j]
                c[k] = -lp.cost[j]
                b -= self.a_orig[:, j] * up
            else:
                a[:, k] = self.a_orig[:, j]
                a[:, k + 1] = -self.a_orig[:, j]
                c[k] = lp.cost[j]
                c[k + 1] = -lp.cost[j]

        self.slack_of_row = np.full(m, -1, dtype=np.int64)
        k = ncan
        for i, s in enumerate(lp.senses):
            if s == LE:
                a[i, k] = 1.0
                self.slack_of_row[i] = k
                k += 1
            elif s == GE:
                a[i, k] = -1.0
                self.slack_of_row[i] = k
                k += 1
        self.a, self.b, self.c, self.ub = a, b, c, ub
        self.n_struct = ntot

    def recover_x(self, xc: np.ndarray) -> np.ndarray:
        lp = self.lp
        x = np.empty(lp.n_vars)
        for j in range(lp.n_vars):
            k = self.col_of[j]
            if self.kinds[j] == self.SHIFT:
                x[j] = lp.lower[j] + xc[k]
            elif self.kinds[j] == self.MIRROR:
                x[j] = lp.upper[j] - xc[k]
            else:
                x[j] = xc[k] - xc[k + 1]
        return x


# ---------------------------------------------------------------------------
# core simplex loop
#
# Columns 0..n-1 are structural (matrix ``a``); columns n..n+m-1 are the
# artificial of each row with sign ``art_signs[i]`` (only priced in phase 1,
# pinned to zero afterwards).


def _loop(a, b, c, ub, art_signs, basis, at_upper, xb, binv, phase1):
    m, n = a.shape
    ntot = n + m
    bland = False
    degen = 0
    it = 0
    since_refactor = 0
    fixed = ub <= 0.0

    def column(j):
        if j < n:
            return a[:, j]
        col = np.zeros(m)
        col[j - n] = art_signs[j - n]
        return col

    def refactor_and_xb():
        bmat = np.empty((m, m))
        for i, j in enumerate(basis):
            bmat[:, i] = column(j)
        binv2 = np.linalg.inv(bmat)
        rhs = b.copy()
        isb = np.zeros(ntot, dtype=bool)
        isb[basis] = True
        for j in np.nonzero(at_upper & ~isb)[0]:
            if ub[j] != 0.0:
                rhs = rhs - column(j) * ub[j]
        return binv2, binv2 @ rhs

    is_basic = np.zeros(ntot, dtype=bool)
    is_basic[basis] = True
    d = np.empty(ntot)
    viol = np.empty(ntot)
    while True:
        it += 1
        if it > _MAX_ITER:
            raise NumericalBreakdown("simplex iteration limit exceeded")
        cb = c[basis]
        y = cb @ binv
        np.subtract(c[:n], y @ a, out=d[:n])
        np.subtract(c[n:], y * art_signs, out=d[n:])

        nonbasic = ~is_basic
        np.multiply(nonbasic & ~at_upper & ~fixed & (d < -_OPT_TOL), -d,
                    out=viol)
        viol += (nonbasic & at_upper & (d > _OPT_TOL)) * d
        if not np.any(viol > 0):
            # wash accumulated inverse noise before trusting optimality
            if since_refactor > 0:
                binv, xb = refactor_and_xb()
                since_refactor = 0
                continue
            obj = float(cb @ xb)
            for j in np.nonzero(at_upper & ~is_basic)[0]:
                if ub[j] != 0.0:
                    obj += c[j] * ub[j]
            return {"status": "optimal", "objective": obj, "basis": basis,
                    "at_upper": at_upper, "xb": xb, "binv": binv, "y": y,
                    "iterations": it}
        if bland:
            j_in = int(np.nonzero(viol > 0)[0][0])
        else:
            j_in = int(np.argmax(viol))
        sigma = -1.0 if at_upper[j_in] else 1.0

        w = binv @ column(j_in)
        w[np.abs(w) < _PIVOT_TOL * max(1.0, float(np.abs(w).max()))] = 0.0
        delta = sigma * w
        t_own = ub[j_in] if np.isfinite(ub[j_in]) else np.inf
        # vectorized ratio test: basic vars dropping to their lower bound or
        # climbing to a finite upper bound
        ub_basis = ub[basis]
        dec = delta > _RATIO_TOL
        inc = (delta < -_RATIO_TOL) & np.isfinite(ub_basis)
        ratios = np.full(m, np.inf)
        ratios[dec] = xb[dec] / delta[dec]
        ratios[inc] = (xb[inc] - ub_basis[inc]) / delta[inc]
        np.clip(ratios, 0.0, None, out=ratios)
        i_min = int(np.argmin(ratios)) if m else 0
        t_row = ratios[i_min] if m else np.inf
        blocker, to_upper = -1, False
        if t_row < t_own - 1e-10:
            tied = np.nonzero(ratios <= t_row + 1e-10)[0]
            if bland:
                blocker = int(tied[np.argmin(basis[tied])])
            else:
                blocker = int(tied[np.argmax(np.abs(delta[tied]))])
            to_upper = bool(inc[blocker])
            t_best = ratios[blocker]
        elif t_row <= t_own + 1e-10 and np.isfinite(t_row):
            # a row ties the entering variable's own range: prefer the flip
            t_best = t_own
        else:
            t_best = t_own
        if np.isinf(t_best):
            if since_refactor > 0:
                binv, xb = refactor_and_xb()
                since_refactor = 0
                continue
            return {"status": "unbounded", "iterations": it}
        t_best = max(t_best, 0.0)

        if t_best <= 1e-12:
            degen += 1
            if degen >= _DEGEN_LIMIT:
                bland = True
        else:
            degen = 0
            bland = False

        xb = xb - t_best * delta
        if blocker < 0:
            at_upper[j_in] = not at_upper[j_in]
            continue
        if abs(w[blocker]) < _PIVOT_TOL:
            raise NumericalBreakdown(
                f"no pivot above {_PIVOT_TOL:g} in ratio test")
        leaving = basis[blocker]
        at_upper[leaving] = to_upper
        is_basic[leaving] = False
        entering_value = (ub[j_in] if at_upper[j_in] else 0.0) + sigma * t_best
        at_upper[j_in] = False
        basis[blocker] = j_in
        is_basic[j_in] = True
        piv = w[blocker]
        new_row = binv[blocker] / piv
        wcol = w.copy()
        wcol[blocker] = 0.0
        binv = binv - np.outer(wcol, new_row)
        binv[blocker] = new_row
        xb[blocker] = entering_value
        since_refactor += 1
        if since_refactor >= _REFACTOR_EVERY:
            binv, xb = refactor_and_xb()
            since_refactor = 0


def _dual_loop(a, b, c, ub, art_signs, basis, at_upper, xb, binv):
    """Bounded dual simplex from a dual-feasible, primal-infeasible basis.

    Drives bound violations of basic variables out while keeping reduced
    costs sign-feasible.  Returns a state dict: "feasible" (basis now primal
    feasible), "infeasible" (a violated row admits no entering column, i.e.
    the LP is infeasible), or "stalled" (caller should solve cold).
    """
    m, n = a.shape
    ntot = n + m
    fixed = ub <= 0.0
    it = 0
    since_refactor = 0

    def column(j):
        if j < n:
            return a[:, j]
        col = np.zeros(m)
        col[j - n] = art_signs[j - n]
        return col

    def refactor_and_xb():
        bmat = np.empty((m, m))
        for i, j in enumerate(basis):
            bmat[:, i] = column(j)
        binv2 = np.linalg.inv(bmat)
        rhs = b.copy()
        isb = np.zeros(ntot, dtype=bool)
        isb[basis] = True
        for j in np.nonzero(at_upper & ~isb)[0]:
            if ub[j] != 0.0:
                rhs = rhs - column(j) * ub[j]
        return binv2, binv2 @ rhs

    is_basic = np.zeros(ntot, dtype=bool)
    is_basic[basis] = True
    while True:
        it += 1
        if it > 4 * m + 200:
            return {"status": "stalled", "iterations": it}
        ub_basis = ub[basis]
        below = -xb
        above = np.where(np.isfinite(ub_basis), xb - ub_basis, -np.inf)
        viol = np.maximum(below, above)
        r = int(np.argmax(viol))
        if viol[r] <= 1e-9:
            return {"status": "feasible", "basis": basis,
                    "at_upper": at_upper, "xb": xb, "binv": binv,
                    "iterations": it}
        leaving_low = below[r] >= above[r]

        y = c[basis] @ binv
        d = np.empty(ntot)
        d[:n] = c[:n] - y @ a
        d[n:] = c[n:] - y * art_signs
        alpha = np.empty(ntot)
        alpha[:n] = binv[r] @ a
        alpha[n:] = binv[r] * art_signs

        nonbasic = ~is_basic & ~fixed
        at_lo = nonbasic & ~at_upper
        at_up = nonbasic & at_upper
        if leaving_low:
            elig = (at_lo & (alpha < -1e-9)) | (at_up & (alpha > 1e-9))
        else:
            elig = (at_lo & (alpha > 1e-9)) | (at_up & (alpha < -1e-9))
        idx_e = np.nonzero(elig)[0]
        if len(idx_e) == 0:
            return {"status": "infeasible", "iterations": it, "row": r,
                    "basis": basis, "binv": binv, "at_upper": at_upper}
        ratios = np.abs(d[idx_e]) / np.abs(alpha[idx_e])
        best = np.min(ratios)
        tied = idx_e[ratios <= best + 1e-10]
        j_in = int(tied[np.argmax(np.abs(alpha[tied]))])

        bound_target = 0.0 if leaving_low else ub_basis[r]
        delta = (xb[r] - bound_target) / alpha[j_in]
        # entering from lower must increase, from upper must decrease
        if at_upper[j_in]:
            delta = min(delta, 0.0)
        else:
            delta = max(delta, 0.0)
        if np.isfinite(ub[j_in]) and abs(delta) > ub[j_in]:
            # bound flip: the entering variable saturates before the
            # violation clears; stay on the same basis
            flip = ub[j_in] if not at_upper[j_in] else -ub[j_in]
            xb = xb - flip * (binv @ column(j_in))
            at_upper[j_in] = not at_upper[j_in]
            continue
        w = binv @ column(j_in)
        piv = w[r]
        if abs(piv) < _PIVOT_TOL:
            return {"status": "stalled", "iterations": it}
        xb = xb - delta * w
        entering_value = (ub[j_in] if at_upper[j_in] else 0.0) + delta
        leaving = basis[r]
        at_upper[leaving] = not leaving_low
        is_basic[leaving] = False
        at_upper[j_in] = False
        basis[r] = j_in
        is_basic[j_in] = True
        new_row = binv[r] / piv
        wcol = w.copy()
        wcol[r] = 0.0
        binv = binv - np.outer(wcol, new_row)
        binv[r] = new_row
        xb[r] = entering_value
        since_refactor += 1
        if since_refactor >= _REFACTOR_EVERY:
            binv, xb = refactor_and_xb()
            since_refactor = 0


def _solve_canonical(can: _Canonical, warm: Basis | None):
    a, b, c, ub = can.a, can.b, can.c, can.ub
    m, n = a.shape
    ntot = n + m
    art_signs = np.where(b >= 0, 1.0, -1.0)
    total_iter = 0

    def refactor(basis, at_upper):
        bmat = np.empty((m, m))
        for i, j in enumerate(basis):
            if j >= n:
                col = np.zeros(m)
                col[j - n] = art_signs[j - n]
                bmat[:, i] = col
            else:
                bmat[:, i] = a[:, j]
        try:
            binv = np.linalg.inv(bmat)
        except np.linalg.LinAlgError:
            return None, None
        rhs = b.copy()
        isb = np.zeros(ntot, dtype=bool)
        isb[basis] = True
        for j in np.nonzero(at_upper & ~isb)[0]:
            if j < n and ub[j] != 0.0:
                rhs = rhs - a[:, j] * ub[j]
        return binv, binv @ rhs

    state = None
    if warm is not None and len(warm.basic) == m and np.all(warm.basic < n) \
            and len(warm.at_upper) == n:
        basis = warm.basic.copy()
        at_upper = np.zeros(ntot, dtype=bool)
        at_upper[:len(warm.at_upper)] = warm.at_upper
        at_upper[basis] = False
        # never leave a variable nonbasic above its (possibly tightened) bound
        at_upper[:n] &= np.isfinite(ub)
        binv, xb = refactor(basis, at_upper)
        if binv is not None:
            ok = np.all(xb >= -1e-7)
            ub_b = ub[basis]
            fin = np.isfinite(ub_b)
            ok = ok and np.all(xb[fin] <= ub_b[fin] + 1e-7)
            if ok:
                np.clip(xb, 0.0, None, out=xb)
                state = (basis, at_upper, xb, binv)
            else:
                # bound or rhs changes left the basis primal infeasible; if
                # the reduced costs still have the right signs, repair with
                # the dual simplex instead of starting over
                c2 = np.concatenate([c, np.zeros(m)])
                ub2 = np.concatenate([ub, np.zeros(m)])
                y = c2[basis] @ binv
                d = np.empty(ntot)
                d[:n] = c - y @ a
                d[n:] = -y * art_signs
                isb = np.zeros(ntot, dtype=bool)
                isb[basis] = True
                nb = ~isb
                bad = np.any(nb & ~at_upper & (ub2 > 0) & (d < -1e-7)) or \
                    np.any(nb & at_upper & (d > 1e-7))
                if not bad:
                    res = _dual_loop(a, b, c2, ub2, art_signs, basis,
                                     at_upper, xb, binv)
                    total_iter += res["iterations"]
                    if res["status"] == "feasible":
                        state = (res["basis"], res["at_upper"], res["xb"],
                                 res["binv"])
                    elif res["status"] == "infeasible":
                        # certified by re-solving cold so the caller gets a
                        # standard phase-1 certificate
                        state = None

    if state is None:
        basis = np.empty(m, dtype=np.int64)
        need_phase1 = False
        for i in range(m):
            s = can.slack_of_row[i]
            if s >= 0 and a[i, s] * b[i] >= 0:
                basis[i] = s
            else:
                basis[i] = n + i
                need_phase1 = True
        at_upper = np.zeros(ntot, dtype=bool)
        binv, xb = refactor(basis, at_upper)
        if need_phase1:
            c1 = np.zeros(ntot)
            c1[n:] = 1.0
            ub1 = np.concatenate([ub, np.full(m, np.inf)])
            res = _loop(a, b, c1, ub1, art_signs, basis, at_upper, xb, binv,
                        phase1=True)
            total_iter += res["iterations"]
            if res["status"] != "optimal":
                raise NumericalBreakdown("phase 1 did not terminate cleanly")
            scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
            if res["objective"] > 1e-7 * scale:
                return {"status": "infeasible", "y1": res["y"],
                        "infeasibility": res["objective"],
                        "iterations": total_iter}
            state = (res["basis"], res["at_upper"], res["xb"], res["binv"])
        else:
            state = (basis, at_upper, xb, binv)

    basis, at_upper, xb, binv = state
    c2 = np.concatenate([c, np.zeros(m)])
    ub2 = ub.copy()
    ub_full = np.concatenate([ub2, np.zeros(m)])  # artificials pinned
    res = _loop(a, b, c2, ub_full, art_signs, basis, at_upper, xb, binv,
                phase1=False)
    total_iter += res["iterations"]
    res["iterations"] = total_iter
    return res


def solve_lp(lp: LinearProgram, basis: Basis | None = None) -> LpOutcome:
    """Solve a LinearProgram to optimality, infeasibility, or unboundedness.

    Deterministic: identical inputs give identical outcomes (fixed pivot
    rule: most-negative reduced cost, ties by lowest index, with Bland's rule
    after 50 consecutive degenerate pivots).  ``basis`` warm-starts from a
    previous outcome; it can change the path but not the result.
    """
    lp.validate()
    if lp.n_rows == 0:
        return _solve_boxed(lp)
    can = _Canonical(lp)
    state = _solve_canonical(can, basis)
    if state["status"] == "infeasible":
        y1 = state["y1"]
        weights = np.empty(lp.n_rows)
        for i, s in enumerate(lp.senses):
            weights[i] = y1[i] if s == GE else -y1[i]
        bound_mult = -(y1 @ can.a_orig)
        cert = FarkasCertificate(row_duals=y1.copy(), row_weights=weights,
                                 bound_multipliers=bound_mult,
                                 infeasibility=state["infeasibility"])
        return LpOutcome(status=LpStatus.INFEASIBLE, farkas=cert,
                         iterations=state["iterations"])
    if state["status"] == "unbounded":
        return LpOutcome(status=LpStatus.UNBOUNDED,
                         iterations=state["iterations"])

    basis_out, at_upper = state["basis"], state["at_upper"]
    xb, y = state["xb"], state["y"]
    nstruct = can.n_struct
    xc = np.zeros(nstruct)
    isb = np.zeros(len(at_upper), dtype=bool)
    isb[basis_out] = True
    for i, j in enumerate(basis_out):
        if j < nstruct:
            xc[j] = xb[i]
    for j in np.nonzero(at_upper[:nstruct] & ~isb[:nstruct])[0]:
        xc[j] = can.ub[j]
    x = can.recover_x(xc)
    reduced = lp.cost - y @ can.a_orig
    obj = float(lp.cost @ x) + lp.objective_constant
    if np.all(basis_out < nstruct):
        saved = Basis(basic=basis_out.copy(),
                      at_upper=at_upper[:nstruct].copy())
    else:
        saved = None  # a basic artificial is not transplantable
    return LpOutcome(status=LpStatus.OPTIMAL, x=x, duals=y.copy(),
                     reduced_costs=reduced, objective=obj, basis=saved,
                     iterations=state["iterations"])


def _solve_boxed(lp: LinearProgram) -> LpOutcome:
    """Row-free LP: minimize over the bound box directly."""
    x = np.empty(lp.n_vars)
    for j in range(lp.n_vars):
        cj = lp.cost[j]
        lo, up = lp.lower[j], lp.upper[j]
        if cj > 0:
            if not np.isfinite(lo):
                return LpOutcome(status=LpStatus.UNBOUNDED)
            x[j] = lo
        elif cj < 0:
            if not np.isfinite(up):
                return LpOutcome(status=LpStatus.UNBOUNDED)
            x[j] = up
        else:
            x[j] = lo if np.isfinite(lo) else (up if np.isfinite(up) else 0.0)
    obj = float(lp.cost @ x) + lp.objective_constant
    return LpOutcome(status=LpStatus.OPTIMAL, x=x, duals=np.zeros(0),
                     reduced_costs=lp.cost.copy(), objective=obj,
                     basis=Basis(np.zeros(0, dtype=np.int64),
                                 np.zeros(0, dtype=bool)))


def dual_objective(lp: LinearProgram, outcome: LpOutcome) -> float:
    """b'y plus the bound terms priced by the reduced costs."""
    y, d = outcome.duals, outcome.reduced_costs
    val = float(lp.rhs @ y) if len(y) else 0.0
    lo_fin = np.isfinite(lp.lower)
    up_fin = np.isfinite(lp.upper)
    val += float(np.sum(lp.lower[lo_fin] * np.maximum(d[lo_fin], 0.0)))
    val += float(np.sum(lp.upper[up_fin] * np.minimum(d[up_fin], 0.0)))
    return val + lp.objective_constant


@dataclass
class ResidualReport:
    max_primal_residual: float
    max_dual_residual: float
    max_complementarity: float
    duality_gap: float
    primal_ok: bool
    dual_ok: bool
    complementarity_ok: bool
    gap_ok: bool

    @property
    def all_ok(self) -> bool:
        return (self.primal_ok and self.dual_ok
                and self.complementarity_ok and self.gap_ok)


def check_solution(lp: LinearProgram, outcome: LpOutcome,
                   primal_tol: float = 1e-8, gap_tol: float = 1e-6,
                   cs_tol: float = 1e-6) -> ResidualReport:
    """Pure diagnostic on an Optimal outcome; nothing raised, only flagged."""
    assert outcome.status == LpStatus.OPTIMAL
    a = lp.dense_matrix()
    x = outcome.x
    y = outcome.duals if len(outcome.duals) else np.zeros(lp.n_rows)
    act = a @ x if lp.n_rows else np.zeros(0)
    primal = 0.0
    comp = 0.0
    for i, s in enumerate(lp.senses):
        scale = 1.0 + abs(lp.rhs[i])
        rownorm = max(1.0, float(np.max(np.abs(a[i]), initial=0.0)))
        if s == LE:
            primal = max(primal, (act[i] - lp.rhs[i]) / scale)
            comp = max(comp, abs((lp.rhs[i] - act[i]) * y[i]) / rownorm / scale)
        elif s == GE:
            primal = max(primal, (lp.rhs[i] - act[i]) / scale)
            comp = max(comp, abs((act[i] - lp.rhs[i]) * y[i]) / rownorm / scale)
        else:
            primal = max(primal, abs(act[i] - lp.rhs[i]) / scale)
    d = outcome.reduced_costs
    dual = 0.0
    for j in range(lp.n_vars):
        lo, up = lp.lower[j], lp.upper[j]
        at_lo = np.isfinite(lo) and x[j] <= lo + 1e-7
        at_up = np.isfinite(up) and x[j] >= up - 1e-7
        denom = 1.0 + abs(lp.cost[j])
        if not at_lo and not at_up:
            dual = max(dual, abs(d[j]) / denom)
        elif at_lo and not at_up:
            dual = max(dual, max(-d[j], 0.0) / denom)
        elif at_up and not at_lo:
            dual = max(dual, max(d[j], 0.0) / denom)
        if np.isfinite(lo):
            comp = max(comp, abs((x[j] - lo) * max(d[j], 0.0)) / (1.0 + abs(lo)))
        if np.isfinite(up):
            comp = max(comp, abs((up - x[j]) * min(d[j], 0.0)) / (1.0 + abs(up)))
    gap = abs(outcome.objective - dual_objective(lp, outcome))
    gap_rel = gap / (1.0 + abs(outcome.objective))
    return ResidualReport(
        max_primal_residual=primal, max_dual_residual=dual,
        max_complementarity=comp, duality_gap=gap,
        primal_ok=primal <= primal_tol, dual_ok=dual <= 1e-7,
        complementarity_ok=comp <= cs_tol, gap_ok=gap_rel <= gap_tol)


def check_certificate(lp: LinearProgram, cert: FarkasCertificate) -> float:
    """Strict-separation margin of a Farkas certificate.

    Returns ``y'b - sup_box(y'A x)``: positive means no point of the bound
    box satisfies every row, proving infeasibility.
    """
    y = cert.row_duals
    a = lp.dense_matrix()
    g = y @ a
    sup = 0.0
    for j in range(lp.n_vars):
        if g[j] > 1e-12:
            if not np.isfinite(lp.upper[j]):
                return -np.inf
            sup += g[j] * lp.upper[j]
        elif g[j] < -1e-12:
            if not np.isfinite(lp.lower[j]):
                return -np.inf
            sup += g[j] * lp.lower[j]
    return float(y @ lp.rhs - sup)


# ---------------------------------------------------------------------------
# branch and bound


@dataclass
class MilpSpec:
    lp: LinearProgram
    integer_indices: list
    rel_gap: float = 1e-6
    node_limit: int = 50_000

    def validate(self):
        self.lp.validate()
        if self.rel_gap <= 0:
            raise DimensionMismatch("gap tolerance must be positive")
        for j in self.integer_indices:
            if not (0 <= j < self.lp.n_vars):
                raise DimensionMismatch(f"integer index {j} out of range")


@dataclass
class MilpOutcome:
    status: LpStatus
    x: np.ndarray | None = None
    objective: float | None = None
    bound: float = -np.inf
    gap: float = np.inf
    nodes_explored: int = 0
    nodes_branched: int = 0
    hit_node_limit: bool = False


def feasible_point(lp: LinearProgram, x: np.ndarray, tol: float = 1e-6) -> bool:
    """Row and bound feasibility of a candidate point."""
    if np.any(x < lp.lower - tol) or np.any(x > lp.upper + tol):
        return False
    for i, row in enumerate(lp.rows):
        act = sum(v * x[j] for j, v in row)
        scale = tol * (1.0 + abs(lp.rhs[i]))
        s = lp.senses[i]
        if s == LE and act > lp.rhs[i] + scale:
            return False
        if s == GE and act < lp.rhs[i] - scale:
            return False
        if s == EQ and abs(act - lp.rhs[i]) > scale:
            return False
    return True


def solve_milp(spec: MilpSpec, incumbent: np.ndarray | None = None) -> MilpOutcome:
    """Best-bound branch and bound over binary/integer variables.

    Node selection: smallest parent LP bound, ties by creation order.
    Branching: most fractional variable, ties by lowest index.  Child nodes
    warm-start from the parent basis (repaired by the dual simplex).  A
    caller-supplied ``incumbent`` point is verified and used for pruning
    from the start.  Raises NodeLimitExceeded (carrying the incumbent) when
    the node budget runs out with the gap open.
    """
    spec.validate()
    lp = spec.lp
    int_idx = np.array(sorted(set(spec.integer_indices)), dtype=np.int64)

    incumbent_x, incumbent_obj = None, np.inf
    if incumbent is not None and feasible_point(lp, incumbent):
        xv = incumbent[int_idx] if len(int_idx) else np.zeros(0)
        if np.all(np.abs(xv - np.round(xv)) <= 1e-6):
            incumbent_x = incumbent.copy()
            incumbent_obj = float(lp.cost @ incumbent) + lp.objective_constant

    def try_fix_and_solve(res):
        """Rounding heuristic: pin each integer variable at its rounded LP
        value and solve the continuous remainder warm."""
        nonlocal incumbent_x, incumbent_obj
        lo2, up2 = lp.lower.copy(), lp.upper.copy()
        vals = np.clip(np.round(res.x[int_idx]), lp.lower[int_idx],
                       lp.upper[int_idx])
        lo2[int_idx] = vals
        up2[int_idx] = vals
        sub = LinearProgram(cost=lp.cost, rows=lp.rows, senses=lp.senses,
                            rhs=lp.rhs, lower=lo2, upper=up2,
                            objective_constant=lp.objective_constant)
        heur = solve_lp(sub, basis=res.basis)
        if heur.status == LpStatus.OPTIMAL \
                and heur.objective < incumbent_obj - 1e-12:
            incumbent_obj = heur.objective
            incumbent_x = heur.x.copy()
            incumbent_x[int_idx] = vals

    counter = 0
    # best bound first; among equal bounds take the newest node (dive)
    heap = [(-np.inf, 0, 0, lp.lower.copy(), lp.upper.copy(), None)]
    explored = branched = 0

    def gap_now():
        lb = min((h[0] for h in heap), default=np.inf)
        lb = min(lb, incumbent_obj)
        if incumbent_x is None:
            return np.inf
        return (incumbent_obj - lb) / max(1.0, abs(incumbent_obj))

    def result(hit_limit=False):
        if incumbent_x is None:
            return MilpOutcome(status=LpStatus.INFEASIBLE, nodes_explored=explored,
                               nodes_branched=branched, hit_node_limit=hit_limit)
        return MilpOutcome(status=LpStatus.OPTIMAL, x=incumbent_x,
                           objective=incumbent_obj,
                           bound=min(min((h[0] for h in heap), default=incumbent_obj),
                                     incumbent_obj),
                           gap=gap_now(), nodes_explored=explored,
                           nodes_branched=branched, hit_node_limit=hit_limit)

    while heap:
        if incumbent_x is not None and gap_now() <= spec.rel_gap:
            return result()
        parent_bound, _, _, lo, up, warm = heapq.heappop(heap)
        if parent_bound >= incumbent_obj - 1e-9:
            continue
        if explored >= spec.node_limit:
            raise NodeLimitExceeded(result(hit_limit=True))
        explored += 1
        node_lp = LinearProgram(cost=lp.cost, rows=lp.rows, senses=lp.senses,
                                rhs=lp.rhs, lower=lo, upper=up, names=lp.names,
                                objective_constant=lp.objective_constant)
        res = solve_lp(node_lp, basis=warm)
        if res.status != LpStatus.OPTIMAL:
            continue
        if res.objective >= incumbent_obj - 1e-9:
            continue
        xv = res.x[int_idx] if len(int_idx) else np.zeros(0)
        frac = np.abs(xv - np.round(xv))
        if len(frac) == 0 or np.all(frac <= 1e-6):
            incumbent_obj = res.objective
            incumbent_x = res.x.copy()
            if len(int_idx):
                incumbent_x[int_idx] = np.round(incumbent_x[int_idx])
            continue
        if explored == 1 or (incumbent_x is None and explored % 20 == 0) \
                or explored % 100 == 0:
            try_fix_and_solve(res)
        branched += 1
        j = int(int_idx[int(np.argmax(frac))])
        val = res.x[j]
        for branch_up in (False, True):
            lo2, up2 = lo.copy(), up.copy()
            if branch_up:
                lo2[j] = float(np.ceil(val - 1e-9))
            else:
                up2[j] = float(np.floor(val + 1e-9))
            if lo2[j] > up2[j] + 1e-12:
                continue
            counter += 1
            heapq.heappush(heap, (res.objective, -counter, counter, lo2, up2,
                                  res.basis))
    if incumbent_x is None:
        return MilpOutcome(status=LpStatus.INFEASIBLE, nodes_explored=explored,
                           nodes_branched=branched)
    return MilpOutcome(status=LpStatus.OPTIMAL, x=incumbent_x,
                       objective=incumbent_obj, bound=incumbent_obj, gap=0.0,
                       nodes_explored=explored, nodes_branched=branched)


# ---------------------------------------------------------------------------
# named construction helper and text dump


class MissingRow(KeyError):
    pass


class IndexMap:
    """Resolves variable and row names to LP indices."""

    def __init__(self):
        self.vars: dict = {}
        self.rows: dict = {}

    def var(self, name) -> int:
        try:
            return self.vars[name]
        except KeyError:
            raise MissingRow(f"unknown variable {name!r}") from None

    def row(self, name) -> int:
        try:
            return self.rows[name]
        except KeyError:
            raise MissingRow(f"unknown row {name!r}") from None

    def has_row(self, name) -> bool:
        return name in self.rows


class LpBuilder:
    """Incremental construction of a LinearProgram with named parts."""

    def __init__(self):
        self._cost, self._lower, self._upper, self._names = [], [], [], []
        self._rows, self._senses, self._rhs = [], [], []
        self.index = IndexMap()
        self.constant = 0.0

    def add_var(self, name, cost=0.0, lower=0.0, upper=np.inf) -> int:
        if name in self.index.vars:
            raise ValueError(f"duplicate variable {name!r}")
        j = len(self._cost)
        self.index.vars[name] = j
        self._cost.append(float(cost))
        self._lower.append(float(lower))
        self._upper.append(float(upper))
        self._names.append(str(name))
        return j

    def add_row(self, name, coeffs, sense, rhs) -> int:
        if name in self.index.rows:
            raise ValueError(f"duplicate row {name!r}")
        i = len(self._rows)
        self.index.rows[name] = i
        merged: dict = {}
        for j, v in coeffs:
            merged[j] = merged.get(j, 0.0) + float(v)
        self._rows.append([(j, v) for j, v in merged.items() if v != 0.0])
        self._senses.append(sense)
        self._rhs.append(float(rhs))
        return i

    def build(self) -> LinearProgram:
        lp = LinearProgram(cost=np.array(self._cost, dtype=float),
                           rows=self._rows, senses=list(self._senses),
                           rhs=np.array(self._rhs, dtype=float),
                           lower=np.array(self._lower, dtype=float),
                           upper=np.array(self._upper, dtype=float),
                           names=list(self._names),
                           objective_constant=self.constant)
        lp.validate()
        return lp


def lp_to_text(lp: LinearProgram) -> str:
    """Line-oriented debug dump.

    Layout: a ``min`` line with objective nonzeros as index:value pairs, one
    ``bnd`` line per variable whose bounds differ from [0, inf), then one
    line per row: ``<sense> <rhs> j:v j:v ...``.
    """
    out = ["min " + " ".join(f"{j}:{v:.12g}"
                             for j, v in enumerate(lp.cost) if v != 0.0)]
    if lp.objective_constant:
        out[0] += f" const:{lp.objective_constant:.12g}"
    for j in range(lp.n_vars):
        lo, up = lp.lower[j], lp.upper[j]
        if lo == 0.0 and not np.isfinite(up):
            continue
        out.append(f"bnd {j} {lo:.12g} {up:.12g}")
    for i, row in enumerate(lp.rows):
        terms = " ".join(f"{j}:{v:.12g}" for j, v in sorted(row))
        out.append(f"{lp.senses[i]} {lp.rhs[i]:.12g} {terms}")
    return "\n".join(out) + "\n"
