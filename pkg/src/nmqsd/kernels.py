"""Deterministic kernel equations: memory propagators, trajectory kernels and
master-equation coefficients.

Everything here discretizes linear integro-differential equations on a uniform
grid with trapezoidal memory quadrature.  Final-value problems whose memory
runs over both sides of s are solved by a dense "box" collocation: the
differential relation is enforced on every cell midpoint (derivative by the
two-point difference, pointwise terms and node memory integrals averaged over
the cell ends) and the final value supplies the closing row.  This treats the
two-sided memory exactly and is second order.

Production master coefficients avoid the per-row dense solves.  Because
beta(s, s') depends only on s - s', the homogeneous propagator is translation
invariant, u(t, s) = v(t - s), where v solves a forward Volterra equation.
The inhomogeneous F, G, H, I rows then follow from variation of parameters
(the Volterra resolvent of a difference kernel is the fundamental solution
itself), and the coefficient integrals a(t), b(t) collapse to bilinear forms
over a growing square that are updated incrementally in O(n^2) total work.
Both routes are exposed; they agree to discretization order and are
cross-checked in the test suite.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .bath import CorrelationTable, TimeGrid
from .errors import NonlinearBlowupError, ShapeError, SolverSingularError

__all__ = [
    "URow",
    "FGHIRows",
    "FjSlice",
    "KernelSolution",
    "CoefficientTable",
    "DephasingCoefficients",
    "TRoute",
    "solve_u",
    "march_homogeneous",
    "solve_sources",
    "solve_FGHI",
    "master_coefficients",
    "master_coefficients_dense",
    "master_coefficients_zero_temperature",
    "solve_fj_s_route",
    "solve_fj_t_route",
    "dephasing_coefficients",
]

CONDITION_WARN_THRESHOLD = 1e12


# ---------------------------------------------------------------------------
# trapezoid memory matrices and the box collocation assembler
# ---------------------------------------------------------------------------

def _trap_weights(k: int, dt: float) -> np.ndarray:
    w = np.full(k + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def _lower_memory(alpha_pos: np.ndarray, k: int, dt: float) -> np.ndarray:
    """L[i, m] = trapezoid weight * alpha((i-m)h) for m <= i; row i=0 is empty."""
    i = np.arange(k + 1)
    diff = np.subtract.outer(i, i)
    vals = alpha_pos[np.clip(diff, 0, None)]
    w = np.where(diff > 0, 1.0, 0.5)          # halves at m = 0 and m = i
    w = np.where(np.arange(k + 1)[None, :] == 0, 0.5, w)
    mat = np.where(diff >= 0, vals * w, 0.0) * dt
    mat[0, :] = 0.0
    return mat


def _upper_memory(alpha_pos: np.ndarray, k: int, dt: float) -> np.ndarray:
    """U[i, m] = trapezoid weight * alpha((m-i)h) for m >= i; row i=k is empty."""
    i = np.arange(k + 1)
    diff = np.subtract.outer(i, i)            # i - m
    vals = alpha_pos[np.clip(-diff, 0, None)]
    w = np.where(-diff > 0, 1.0, 0.5)
    w = np.where(np.arange(k + 1)[None, :] == k, 0.5, w)
    mat = np.where(diff <= 0, vals * w, 0.0) * dt
    mat[k, :] = 0.0
    return mat


def _box_matrix(k: int, dt: float, omega_coeff: complex, memory: np.ndarray) -> np.ndarray:
    """Assemble (d/ds + omega_coeff + memory-op) rows on cells plus a final row."""
    n = k + 1
    a = np.zeros((n, n), dtype=complex)
    cells = np.arange(k)
    a[cells, cells + 1] += 1.0 / dt
    a[cells, cells] += -1.0 / dt
    a[cells, cells] += 0.5 * omega_coeff
    a[cells, cells + 1] += 0.5 * omega_coeff
    a[:k, :] += 0.5 * (memory[:k, :] + memory[1:, :])
    a[k, k] = 1.0
    return a


def _solve_dense(a: np.ndarray, rhs: np.ndarray, what: str):
    """LU solve with a cheap 1-norm condition estimate; warn/raise on trouble."""
    anorm = np.linalg.norm(a, 1)
    try:
        lu, piv = scipy.linalg.lu_factor(a)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SolverSingularError(f"{what}: collocation matrix not factorizable", None) from exc
    gecon = scipy.linalg.get_lapack_funcs("gecon", (a,))
    rcond, _ = gecon(lu, anorm)
    if rcond == 0 or not np.isfinite(rcond):
        raise SolverSingularError(f"{what}: collocation matrix is singular",
                                  condition=np.inf)
    cond = float(1.0 / rcond)
    if cond > CONDITION_WARN_THRESHOLD:
        warnings.warn(f"{what}: collocation condition estimate {cond:.3e} "
                      f"exceeds {CONDITION_WARN_THRESHOLD:.0e}", RuntimeWarning)
    return scipy.linalg.lu_solve((lu, piv), rhs), cond


def _alpha_pos(correlations, which: int, k: int) -> np.ndarray:
    arr = correlations.alpha1 if which == 1 else correlations.alpha2
    if k >= len(arr):
        raise ShapeError(f"t_index {k} outside grid with {len(arr) - 1} steps")
    return arr[:k + 1]


def _g_pos(correlations, k: int) -> np.ndarray:
    """g(delta) = conj(alpha2(delta)) - alpha1(delta) on delta = 0..k*dt."""
    return np.conj(_alpha_pos(correlations, 2, k)) - _alpha_pos(correlations, 1, k)


# ---------------------------------------------------------------------------
# homogeneous propagator u(t, s) = v(t - s)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class URow:
    values: np.ndarray
    condition: float


def solve_u(correlations: CorrelationTable, t_index: int, Omega: float) -> URow:
    """Dense collocation row of the homogeneous final-value equation.

    Solves d_s u - i*Omega*u + int_s^t beta(s,s') u(t,s') ds' = 0 with
    u(t, t) = 1 over s in [0, t_index*dt].
    """
    k = int(t_index)
    dt = correlations.grid.dt
    if k == 0:
        return URow(values=np.ones(1, dtype=complex), condition=1.0)
    mem = _upper_memory(_g_pos(correlations, k), k, dt)
    a = _box_matrix(k, dt, -1j * Omega, mem)
    rhs = np.zeros(k + 1, dtype=complex)
    rhs[k] = 1.0
    sol, cond = _solve_dense(a, rhs, "solve_u")
    return URow(values=sol, condition=cond)


def march_homogeneous(correlations: CorrelationTable, Omega: float, n: int) -> np.ndarray:
    """v(tau) on the grid, where u(t, s) = v(t - s).

    v' = -i*Omega*v + int_0^tau g(x) v(tau - x) dx with v(0) = 1 and
    g(x) = conj(alpha2(x)) - alpha1(x); predictor-corrector trapezoid march.
    """
    dt = correlations.grid.dt
    g = _g_pos(correlations, n)
    v = np.zeros(n + 1, dtype=complex)
    v[0] = 1.0
    rhs = np.zeros(n + 1, dtype=complex)  # memo of -iOm v_k + (g*v)(tau_k)
    rhs[0] = -1j * Omega
    w_new = 0.5 * dt                       # trapezoid weight of the newest node
    for k in range(n):
        pred = v[k] + dt * rhs[k]
        # convolution at tau_{k+1} over nodes 0..k (known) plus the new node
        conv_known = _trap_weights(k + 1, dt)[:k + 1] @ (g[k + 1:0:-1] * v[:k + 1])
        rhs_pred = -1j * Omega * pred + conv_known + w_new * g[0] * pred
        v_new = v[k] + 0.5 * dt * (rhs[k] + rhs_pred)
        v[k + 1] = v_new
        rhs[k + 1] = -1j * Omega * v_new + conv_known + w_new * g[0] * v_new
    return v


# ---------------------------------------------------------------------------
# inhomogeneous F, G, H, I rows
# ---------------------------------------------------------------------------

def solve_sources(u_row: np.ndarray, correlations: CorrelationTable):
    """X(t,s) and Y(t,s) on the s-grid for the given u row.

    X(t,s) = int_0^t alpha2(s'-s) conj(u(t,s')) ds',
    Y(t,s) = int_0^t alpha1(s'-s) u(t,s') ds'  (trapezoid).
    """
    u = np.asarray(getattr(u_row, "values", u_row), dtype=complex)
    k = len(u) - 1
    dt = correlations.grid.dt
    w = _trap_weights(k, dt)
    m = np.arange(k + 1)
    tau = np.subtract.outer(m, m) * dt     # s'_row? -> use [s, s'] layout below
    # rows: s index i; cols: s' index m; argument s' - s = (m - i) dt
    a2 = correlations.alpha2_at(-tau)      # (m - i) dt
    a1 = correlations.alpha1_at(-tau)
    x = a2 @ (w * np.conj(u))
    y = a1 @ (w * u)
    return x, y


@dataclass(frozen=True)
class FGHIRows:
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    I: np.ndarray
    condition: float


def solve_FGHI(correlations: CorrelationTable, Omega: float, t_index: int,
               u_row=None) -> FGHIRows:
    """Dense collocation rows for the four inhomogeneous final-value equations.

    d_s F + i*Omega*F - int_0^s beta(s',s) F ds' = -X, F(t,t) = 1, and
    likewise G (+X, 0), H (+Y, 1), I (-Y, 0) with kernel beta(s,s') and
    -i*Omega in the H/I pair.
    """
    k = int(t_index)
    dt = correlations.grid.dt
    if u_row is None:
        u_row = solve_u(correlations, k, Omega)
    u = np.asarray(getattr(u_row, "values", u_row), dtype=complex)
    x, y = solve_sources(u, correlations)
    if k == 0:
        one = np.ones(1, complex)
        zero = np.zeros(1, complex)
        return FGHIRows(F=one, G=zero, H=one.copy(), I=zero.copy(), condition=1.0)

    # beta(s', s) = g(s - s') and beta(s, s') = conj(g)(s - s') for s' <= s,
    # with g(d) = conj(alpha2(d)) - alpha1(d); both memory terms enter the
    # operators with a minus sign.
    g = _g_pos(correlations, k)
    mem_fg = -_lower_memory(g, k, dt)
    mem_hi = -_lower_memory(np.conj(g), k, dt)

    a_fg = _box_matrix(k, dt, 1j * Omega, mem_fg)
    a_hi = _box_matrix(k, dt, -1j * Omega, mem_hi)

    def _rhs(source, final):
        r = np.zeros(k + 1, dtype=complex)
        r[:k] = 0.5 * (source[:k] + source[1:])
        r[k] = final
        return r

    rhs_fg = np.column_stack([_rhs(-x, 1.0), _rhs(x, 0.0)])
    rhs_hi = np.column_stack([_rhs(y, 1.0), _rhs(-y, 0.0)])
    sol_fg, cond1 = _solve_dense(a_fg, rhs_fg, "solve_FGHI[F,G]")
    sol_hi, cond2 = _solve_dense(a_hi, rhs_hi, "solve_FGHI[H,I]")
    return FGHIRows(F=sol_fg[:, 0], G=sol_fg[:, 1],
                    H=sol_hi[:, 0], I=sol_hi[:, 1],
                    condition=max(cond1, cond2))


# ---------------------------------------------------------------------------
# master-equation coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientTable:
    """a(t), b(t) on the grid; c and d are derived fields, never recomputed."""

    grid: TimeGrid
    a: np.ndarray
    b: np.ndarray
    min_abs_v: float = 1.0

    @property
    def c(self) -> np.ndarray:
        return -np.conj(self.a)

    @property
    def d(self) -> np.ndarray:
        return -np.conj(self.b)


class _Bilinear:
    """Incremental trapezoid value of h^2 sum_{x,y<=k} p[x] K[(x-y)h] r[y].

    Maintains the unit-weight square sum and its edge strips so each growth
    step costs two length-(k+1) dot products; trapezoid edge and corner
    corrections are applied when the value is read.
    """

    def __init__(self, kernel_two_sided: np.ndarray, n: int):
        self.k2 = kernel_two_sided
        self.n0 = n
        self.s = 0j
        self.row0 = 0j
        self.col0 = 0j
        self.row_k = 0j
        self.col_k = 0j

    def grow_and_value(self, p: np.ndarray, r: np.ndarray, dt: float) -> complex:
        k = len(p) - 1
        n0 = self.n0
        kern_row = self.k2[n0:n0 + k + 1][::-1]      # K[k-y], y = 0..k
        kern_col = self.k2[n0 - k:n0 + 1]            # K[x-k], x = 0..k
        self.row_k = p[k] * np.dot(kern_row, r)
        self.col_k = r[k] * np.dot(p, kern_col)
        if k == 0:
            self.s = self.row_k
            self.row0 = self.row_k
            self.col0 = self.row_k
            return 0j
        self.s += self.row_k + self.col_k - p[k] * self.k2[n0] * r[k]
        self.row0 += p[0] * self.k2[n0 - k] * r[k]
        self.col0 += p[k] * self.k2[n0 + k] * r[0]
        corners = (p[0] * self.k2[n0] * r[0] + p[0] * self.k2[n0 - k] * r[k]
                   + p[k] * self.k2[n0 + k] * r[0] + p[k] * self.k2[n0] * r[k])
        val = (self.s - 0.5 * (self.row0 + self.row_k + self.col0 + self.col_k)
               + 0.25 * corners)
        return val * dt * dt


def master_coefficients(correlations: CorrelationTable, Omega: float,
                        grid: TimeGrid = None) -> CoefficientTable:
    """a(t), b(t) on the full grid via the translation-invariant fast route.

    a(t) = int_0^t [conj(alpha1(t-s)) conj(F(t,s)) - alpha2(t-s) I(t,s)] ds,
    b(t) = int_0^t [conj(alpha1(t-s)) conj(G(t,s)) - alpha2(t-s) H(t,s)] ds,
    with F..I eliminated through the fundamental solution v.
    """
    if grid is not None and grid != correlations.grid:
        raise ShapeError("grid does not match the correlation table grid")
    grid = correlations.grid
    n = grid.n_steps
    dt = grid.dt
    v = march_homogeneous(correlations, Omega, n)
    vbar = np.conj(v)
    vmin = float(np.min(np.abs(v)))
    if vmin < 1e-12:
        raise SolverSingularError(
            "homogeneous propagator v(t) vanishes on the grid; the "
            "convolutionless generator does not exist at that time",
            condition=np.inf)
    if vmin < 1e-3:
        warnings.warn(f"homogeneous propagator min |v| = {vmin:.3e}; "
                      "master coefficients are near a dynamical-map singularity",
                      RuntimeWarning)

    a1_two = correlations.two_sided(1)
    a2_two = correlations.two_sided(2)
    w_all = np.ones(n + 1)

    # running convolutions q1 = (alpha1 * v), q2 = (alpha2 * vbar) at each t
    q1 = np.zeros(n + 1, dtype=complex)
    q2 = np.zeros(n + 1, dtype=complex)
    a1_pos = correlations.alpha1
    a2_pos = correlations.alpha2
    for k in range(1, n + 1):
        w = _trap_weights(k, dt)
        q1[k] = np.dot(w * a1_pos[k::-1], v[:k + 1])
        q2[k] = np.dot(w * a2_pos[k::-1], vbar[:k + 1])

    t1 = _Bilinear(a2_two, n)   # int int q1(x) alpha2(x-y) vbar(y)
    t2 = _Bilinear(a2_two, n)   # int int v(x)  alpha2(x-y) vbar(y)
    t3 = _Bilinear(a1_two, n)   # int int q2(x) alpha1(x-y) v(y)
    t4 = _Bilinear(a1_two, n)   # int int vbar(x) alpha1(x-y) v(y)

    a = np.zeros(n + 1, dtype=complex)
    b = np.zeros(n + 1, dtype=complex)
    for k in range(n + 1):
        pv = v[:k + 1]
        pvb = vbar[:k + 1]
        val1 = t1.grow_and_value(q1[:k + 1], pvb, dt)
        val2 = t2.grow_and_value(pv, pvb, dt)
        val3 = t3.grow_and_value(q2[:k + 1], pv, dt)
        val4 = t4.grow_and_value(pvb, pv, dt)
        if k == 0:
            continue
        c_f = (1.0 + val2) / v[k]
        c_g = -val2 / v[k]
        c_h = (1.0 - val4) / vbar[k]
        c_i = val4 / vbar[k]
        a[k] = np.conj(c_f * q1[k] - val1) - (c_i * q2[k] - val3)
        b[k] = np.conj(c_g * q1[k] + val1) - (c_h * q2[k] + val3)
    return CoefficientTable(grid=grid, a=a, b=b, min_abs_v=vmin)


def master_coefficients_dense(correlations: CorrelationTable, Omega: float,
                              grid: TimeGrid = None) -> CoefficientTable:
    """a(t), b(t) from per-row dense collocation solves (cross-check route)."""
    if grid is not None and grid != correlations.grid:
        raise ShapeError("grid does not match the correlation table grid")
    grid = correlations.grid
    n = grid.n_steps
    dt = grid.dt
    a = np.zeros(n + 1, dtype=complex)
    b = np.zeros(n + 1, dtype=complex)
    for k in range(1, n + 1):
        rows = solve_FGHI(correlations, Omega, k)
        w = _trap_weights(k, dt)
        a1c = np.conj(correlations.alpha1[k::-1])
        a2v = correlations.alpha2[k::-1]
        a[k] = np.dot(w, a1c * np.conj(rows.F) - a2v * rows.I)
        b[k] = np.dot(w, a1c * np.conj(rows.G) - a2v * rows.H)
    return CoefficientTable(grid=grid, a=a, b=b)


def master_coefficients_zero_temperature(correlations: CorrelationTable,
                                         Omega: float) -> CoefficientTable:
    """Dedicated zero-temperature path: alpha2 is ignored entirely.

    With alpha2 = 0 the F row is v(s)/v(t) and a(t) = conj(q1(t)/v(t)) with
    q1 = alpha1 * v; b vanishes identically.
    """
    grid = correlations.grid
    n = grid.n_steps
    dt = grid.dt
    a1_pos = correlations.alpha1
    # forward march with g = -alpha1 (the T=0 memory kernel)
    v = np.zeros(n + 1, dtype=complex)
    v[0] = 1.0
    rhs = np.zeros(n + 1, dtype=complex)
    rhs[0] = -1j * Omega
    g = -a1_pos
    for k in range(n):
        pred = v[k] + dt * rhs[k]
        conv_known = _trap_weights(k + 1, dt)[:k + 1] @ (g[k + 1:0:-1] * v[:k + 1])
        rhs_pred = -1j * Omega * pred + conv_known + 0.5 * dt * g[0] * pred
        v[k + 1] = v[k] + 0.5 * dt * (rhs[k] + rhs_pred)
        rhs[k + 1] = -1j * Omega * v[k + 1] + conv_known + 0.5 * dt * g[0] * v[k + 1]
    vmin = float(np.min(np.abs(v)))
    if vmin < 1e-12:
        raise SolverSingularError("zero-T propagator vanishes on the grid",
                                  condition=np.inf)
    a = np.zeros(n + 1, dtype=complex)
    for k in range(1, n + 1):
        w = _trap_weights(k, dt)
        q1 = np.dot(w * a1_pos[k::-1], v[:k + 1])
        a[k] = np.conj(q1 / v[k])
    return CoefficientTable(grid=grid, a=a, b=np.zeros(n + 1, dtype=complex),
                            min_abs_v=vmin)


# ---------------------------------------------------------------------------
# trajectory kernels f1, f2, j1, j2 (linear s-route)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FjSlice:
    """Rows f1(t,s), f2(t,s) and slices j_i(t; s, s') for one fixed t.

    j arrays are (k+1) x (k+1); the first index is s, the second s'.  Node
    values on the jump diagonal s = s' are the jump averages, which is what
    second-order trapezoid quadrature across the discontinuity wants.  The
    s' = t columns carry the boundary rows j1(t,s,t) = -f1(t,s) and
    j2(t,s,t) = +f2(t,s).
    """

    t_index: int
    f1: np.ndarray
    f2: np.ndarray
    j1: np.ndarray
    j2: np.ndarray
    condition: float


def _fj_matrices(correlations, Omega, k, dt):
    a1 = _alpha_pos(correlations, 1, k)
    a2 = _alpha_pos(correlations, 2, k)
    mem1 = _lower_memory(a1, k, dt) + _upper_memory(a2, k, dt)
    mem2 = -_lower_memory(a2, k, dt) - _upper_memory(a1, k, dt)
    m1 = _box_matrix(k, dt, 1j * Omega, mem1)
    m2 = _box_matrix(k, dt, -1j * Omega, mem2)
    return m1, m2


def solve_fj_s_route(correlations: CorrelationTable, Omega: float,
                     t_index: int) -> FjSlice:
    """Solve the decoupled linear s-equations for one fixed t.

    The delta sources of the j equations are realized as unit jumps of the
    solution across s = s', entering the box scheme as half-cell sources
    1/(2h) in the two cells adjacent to the source node.  The sign (+delta
    for j1, -delta for j2) reproduces the boundary rows j1(t,s,t) = -f1(t,s)
    and j2(t,s,t) = +f2(t,s).
    """
    k = int(t_index)
    dt = correlations.grid.dt
    if k == 0:
        one = np.ones(1, complex)
        return FjSlice(t_index=0, f1=one, f2=one.copy(),
                       j1=np.zeros((1, 1), complex), j2=np.zeros((1, 1), complex),
                       condition=1.0)

    m1, m2 = _fj_matrices(correlations, Omega, k, dt)

    # right-hand sides: one final-value column for f, then k delta columns
    # for s' = 0..k-1 (the s' = t column comes from the boundary relation)
    rhs1 = np.zeros((k + 1, k + 1), dtype=complex)
    rhs2 = np.zeros((k + 1, k + 1), dtype=complex)
    rhs1[k, 0] = 1.0  # f1 final value
    rhs2[k, 0] = 1.0
    for l in range(k):
        col = l + 1
        if l > 0:
            rhs1[l - 1, col] = 0.5 / dt
            rhs2[l - 1, col] = -0.5 / dt
        rhs1[l, col] = 0.5 / dt
        rhs2[l, col] = -0.5 / dt
    sol1, cond1 = _solve_dense(m1, rhs1, "solve_fj[f1,j1]")
    sol2, cond2 = _solve_dense(m2, rhs2, "solve_fj[f2,j2]")

    f1 = sol1[:, 0]
    f2 = sol2[:, 0]
    j1 = np.zeros((k + 1, k + 1), dtype=complex)
    j2 = np.zeros((k + 1, k + 1), dtype=complex)
    j1[:, :k] = sol1[:, 1:]
    j2[:, :k] = sol2[:, 1:]
    j1[:, k] = -f1          # boundary column s' = t
    j2[:, k] = f2
    j1[k, k] = 0.0          # s = t row vanishes for every s', corner included
    j2[k, k] = 0.0
    return FjSlice(t_index=k, f1=f1, f2=f2, j1=j1, j2=j2,
                   condition=max(cond1, cond2))


# ---------------------------------------------------------------------------
# nonlinear t-route (cross-check only)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TRoute:
    """Forward-in-t solution tables: f1, f2 lower-triangular over (t_k, s_i),
    and the j slices at the final time only (full 3-index tensors are never
    materialized)."""

    grid: TimeGrid
    f1: np.ndarray
    f2: np.ndarray
    j1_final: np.ndarray
    j2_final: np.ndarray


def solve_fj_t_route(correlations: CorrelationTable, Omega: float,
                     grid: TimeGrid = None, max_rel_step: float = 0.5) -> TRoute:
    """Forward-step the coupled nonlinear t-equations (Heun predictor-corrector).

    State at time index k: vectors f1, f2 over s_i (i <= k) and matrices
    j1, j2 over (s_i, s'_l).  New boundary entries per step: f_i(t,t) = 1,
    j_i(t, t, s') = 0, j1(t, s, t) = -f1(t, s), j2(t, s, t) = +f2(t, s),
    and the jump-average -f1/2 (+f2/2) on the newborn diagonal corner.
    """
    if grid is not None and grid != correlations.grid:
        raise ShapeError("grid does not match the correlation table grid")
    grid = correlations.grid
    n = grid.n_steps
    if n > 400:
        raise ShapeError("t-route cross-check is capped at 400 steps")
    dt = grid.dt
    a1 = correlations.alpha1
    a2 = correlations.alpha2

    f1_tab = np.zeros((n + 1, n + 1), dtype=complex)
    f2_tab = np.zeros((n + 1, n + 1), dtype=complex)
    f1 = np.ones(1, dtype=complex)
    f2 = np.ones(1, dtype=complex)
    j1 = np.full((1, 1), -0.5, dtype=complex)   # jump average at the corner
    j2 = np.full((1, 1), 0.5, dtype=complex)
    f1_tab[0, 0] = 1.0
    f2_tab[0, 0] = 1.0

    def rhs(k, f1v, f2v, j1m, j2m):
        w = _trap_weights(k, dt)
        s1 = np.dot(w * a1[k::-1], f1v)
        s2 = np.dot(w * a2[k::-1], f2v)
        m1 = (w * a1[k::-1]) @ j1m      # int alpha1(t-sigma) j1(t,sigma,s') dsigma
        m2 = (w * a2[k::-1]) @ j2m
        df1 = 1j * Omega * f1v + (s1 + s2) * f1v - m2
        df2 = -1j * Omega * f2v - (s1 + s2) * f2v - m1
        dj1 = np.outer(f1v, m1)
        dj2 = -np.outer(f2v, m2)
        return df1, df2, dj1, dj2

    for k in range(n):
        df1, df2, dj1, dj2 = rhs(k, f1, f2, j1, j2)
        # predictor on the old index range, then extend with boundary values
        p_f1 = f1 + dt * df1
        p_f2 = f2 + dt * df2
        p_j1 = j1 + dt * dj1
        p_j2 = j2 + dt * dj2
        p_f1e = np.append(p_f1, 1.0)
        p_f2e = np.append(p_f2, 1.0)
        p_j1e = np.zeros((k + 2, k + 2), dtype=complex)
        p_j2e = np.zeros((k + 2, k + 2), dtype=complex)
        p_j1e[:k + 1, :k + 1] = p_j1
        p_j2e[:k + 1, :k + 1] = p_j2
        p_j1e[:k + 1, k + 1] = -p_f1
        p_j2e[:k + 1, k + 1] = p_f2
        p_j1e[k + 1, k + 1] = -0.5   # newborn diagonal carries the jump average
        p_j2e[k + 1, k + 1] = 0.5
        qf1, qf2, qj1, qj2 = rhs(k + 1, p_f1e, p_f2e, p_j1e, p_j2e)

        f1n = f1 + 0.5 * dt * (df1 + qf1[:k + 1])
        f2n = f2 + 0.5 * dt * (df2 + qf2[:k + 1])
        j1n = j1 + 0.5 * dt * (dj1 + qj1[:k + 1, :k + 1])
        j2n = j2 + 0.5 * dt * (dj2 + qj2[:k + 1, :k + 1])

        rel = np.max(np.abs(f1n - f1)) / max(np.max(np.abs(f1)), 1e-30)
        if rel > max_rel_step or not np.all(np.isfinite(f1n)):
            raise NonlinearBlowupError(
                f"t-route step {k} rejected: relative change {rel:.3g} > {max_rel_step}")

        f1 = np.append(f1n, 1.0)
        f2 = np.append(f2n, 1.0)
        j1e = np.zeros((k + 2, k + 2), dtype=complex)
        j2e = np.zeros((k + 2, k + 2), dtype=complex)
        j1e[:k + 1, :k + 1] = j1n
        j2e[:k + 1, :k + 1] = j2n
        j1e[:k + 1, k + 1] = -f1[:k + 1]
        j2e[:k + 1, k + 1] = f2[:k + 1]
        j1e[k + 1, k + 1] = -0.5
        j2e[k + 1, k + 1] = 0.5
        j1, j2 = j1e, j2e
        f1_tab[k + 1, :k + 2] = f1
        f2_tab[k + 1, :k + 2] = f2

    j1_out = j1.copy()
    j2_out = j2.copy()
    j1_out[-1, -1] = 0.0   # corner reported with the s = t row convention
    j2_out[-1, -1] = 0.0
    return TRoute(grid=grid, f1=f1_tab, f2=f2_tab, j1_final=j1_out, j2_final=j2_out)


# ---------------------------------------------------------------------------
# lazily assembled KernelSolution tables
# ---------------------------------------------------------------------------

class KernelSolution:
    """Row-cached access to u, F, G, H, I, f1, f2 and per-t j slices."""

    def __init__(self, correlations: CorrelationTable, Omega: float):
        self.correlations = correlations
        self.Omega = Omega
        self.grid = correlations.grid
        self._u = {}
        self._fghi = {}
        self._fj = {}

    def u_row(self, t_index: int) -> np.ndarray:
        if t_index not in self._u:
            self._u[t_index] = solve_u(self.correlations, t_index, self.Omega)
        return self._u[t_index].values

    def fghi_rows(self, t_index: int) -> FGHIRows:
        if t_index not in self._fghi:
            self._fghi[t_index] = solve_FGHI(self.correlations, self.Omega, t_index,
                                             u_row=self.u_row(t_index))
        return self._fghi[t_index]

    def fj_slice(self, t_index: int) -> FjSlice:
        if t_index not in self._fj:
            self._fj[t_index] = solve_fj_s_route(self.correlations, self.Omega, t_index)
        return self._fj[t_index]


# ---------------------------------------------------------------------------
# dephasing-model coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DephasingCoefficients:
    grid: TimeGrid
    f: np.ndarray
    g: np.ndarray
    kappa: float


def dephasing_coefficients(correlations: CorrelationTable, kappa: float,
                           grid: TimeGrid = None) -> DephasingCoefficients:
    """f(t) = int_0^t alpha(t-s) ds and g(t) = kappa int_0^t alpha(t-s)(t-s) ds
    with alpha = alpha1 + alpha2 (trapezoid)."""
    if grid is not None and grid != correlations.grid:
        raise ShapeError("grid does not match the correlation table grid")
    grid = correlations.grid
    n = grid.n_steps
    dt = grid.dt
    alpha = correlations.alpha1 + correlations.alpha2
    taus = grid.times
    f = np.zeros(n + 1, dtype=complex)
    g = np.zeros(n + 1, dtype=complex)
    for k in range(1, n + 1):
        w = _trap_weights(k, dt)
        f[k] = np.dot(w, alpha[:k + 1])
        g[k] = kappa * np.dot(w, alpha[:k + 1] * taus[:k + 1])
    return DephasingCoefficients(grid=grid, f=f, g=g, kappa=kappa)
