"""Density-matrix integrators: exact convolutionless, Lindblad and dephasing.

All integrators use classical RK4 with fixed dt on the shared grid; tabulated
coefficients are linearly interpolated at half steps.  The right-hand side is
Hermitized before being applied, so Hermiticity is preserved by construction
and the residual is logged as a diagnostic.  Positivity is never enforced:
violations beyond tolerance are reported, not clipped.
"""

from dataclasses import dataclass, field

import numpy as np

from .bath import TimeGrid
from .errors import InvalidRateError, ModelMismatchError, ShapeError
from .fock import FockSpace, LEAKAGE_THRESHOLD, truncation_leakage
from .kernels import CoefficientTable, DephasingCoefficients

__all__ = [
    "DensitySeries",
    "integrate_convolutionless",
    "integrate_lindblad",
    "integrate_dephasing",
]


@dataclass
class DensitySeries:
    """Time-indexed density matrices plus per-step diagnostics."""

    grid: TimeGrid
    states: np.ndarray               # (n_steps+1, d, d)
    herm_defect: np.ndarray
    trace_defect: np.ndarray
    min_eigenvalue: np.ndarray
    hermitization_residual: float = 0.0
    leakage: float = 0.0
    leakage_flag: bool = False

    def state(self, k: int) -> np.ndarray:
        return self.states[k]

    @property
    def max_trace_defect(self) -> float:
        return float(np.max(self.trace_defect))

    @property
    def max_herm_defect(self) -> float:
        return float(np.max(self.herm_defect))

    @property
    def min_min_eigenvalue(self) -> float:
        return float(np.min(self.min_eigenvalue))

    def expectation(self, op: np.ndarray) -> np.ndarray:
        return np.einsum("kij,ji->k", self.states, op)


def _as_rho(rho0, dim=None):
    rho = np.array(getattr(rho0, "data", rho0), dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ShapeError(f"density matrix must be square, got {rho.shape}")
    if dim is not None and rho.shape[0] != dim:
        raise ShapeError(f"density matrix dim {rho.shape[0]} does not match {dim}")
    return rho


def _rk4_series(rho0, grid, rhs, track_leakage=True):
    """RK4 over the grid; rhs(j, rho) takes the half-step index j = 0..2n."""
    n = grid.n_steps
    dt = grid.dt
    d = rho0.shape[0]
    states = np.empty((n + 1, d, d), dtype=complex)
    herm = np.empty(n + 1)
    trd = np.empty(n + 1)
    mine = np.empty(n + 1)
    herm_resid = 0.0

    def _herm(m):
        return 0.5 * (m + m.conj().T)

    rho = rho0.copy()
    for k in range(n + 1):
        states[k] = rho
        herm[k] = float(np.max(np.abs(rho - rho.conj().T)))
        trd[k] = float(abs(np.trace(rho).real - 1.0) + abs(np.trace(rho).imag))
        mine[k] = float(np.linalg.eigvalsh(_herm(rho))[0])
        if k == n:
            break
        j = 2 * k
        k1 = rhs(j, rho)
        k2 = rhs(j + 1, rho + 0.5 * dt * k1)
        k3 = rhs(j + 1, rho + 0.5 * dt * k2)
        k4 = rhs(j + 2, rho + dt * k3)
        step = (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        herm_resid = max(herm_resid, float(np.max(np.abs(step - step.conj().T))))
        rho = rho + _herm(step)

    leak = float(max(np.real(states[:, -1, -1] + states[:, -2, -2]).max(), 0.0)) \
        if track_leakage and d >= 2 else 0.0
    return DensitySeries(grid=grid, states=states, herm_defect=herm,
                         trace_defect=trd, min_eigenvalue=mine,
                         hermitization_residual=herm_resid,
                         leakage=leak, leakage_flag=leak > LEAKAGE_THRESHOLD)


def _half_step_table(values: np.ndarray) -> np.ndarray:
    """Length 2n+1 array: values on nodes, linear interpolation at midpoints."""
    n = len(values) - 1
    out = np.empty(2 * n + 1, dtype=complex)
    out[0::2] = values
    out[1::2] = 0.5 * (values[:-1] + values[1:])
    return out


def integrate_convolutionless(rho0, coeffs: CoefficientTable, Omega: float,
                              fock: FockSpace) -> DensitySeries:
    """Integrate the exact time-local master equation

    d rho/dt = -i Omega [n, rho] + a(t)[a, rho a+] + b(t)[a, a+ rho]
               + c(t)[a+, a rho] + d(t)[a+, rho a]

    with c = -conj(a), d = -conj(b) taken from the derived fields.
    """
    rho0 = _as_rho(rho0, fock.dim)
    grid = coeffs.grid
    a_op = fock.annihilator
    ad_op = fock.creator
    n_op = fock.number_op
    a_half = _half_step_table(coeffs.a)
    b_half = _half_step_table(coeffs.b)

    def rhs(j, rho):
        at = a_half[j]
        bt = b_half[j]
        ct = -np.conj(at)
        dt_ = -np.conj(bt)
        rad = rho @ ad_op
        adr = ad_op @ rho
        ar = a_op @ rho
        ra = rho @ a_op
        out = -1j * Omega * (n_op @ rho - rho @ n_op)
        out += at * (a_op @ rad - rad @ a_op)
        out += bt * (a_op @ adr - adr @ a_op)
        out += ct * (ad_op @ ar - ar @ ad_op)
        out += dt_ * (ad_op @ ra - ra @ ad_op)
        return out

    return _rk4_series(rho0, grid, rhs)


def integrate_lindblad(rho0, gamma1: float, gamma2: float, L: np.ndarray,
                       H: np.ndarray, grid: TimeGrid) -> DensitySeries:
    """Constant-rate Lindblad equation with damping (L) and pumping (L+) channels."""
    if gamma1 < 0 or gamma2 < 0:
        raise InvalidRateError(f"rates must be >= 0, got {gamma1}, {gamma2}")
    L = np.asarray(L, dtype=complex)
    H = np.asarray(H, dtype=complex)
    rho0 = _as_rho(rho0, L.shape[0])
    Ld = L.conj().T
    LdL = Ld @ L
    LLd = L @ Ld

    def rhs(_, rho):
        out = -1j * (H @ rho - rho @ H)
        out += 0.5 * gamma1 * (2.0 * L @ rho @ Ld - LdL @ rho - rho @ LdL)
        out += 0.5 * gamma2 * (2.0 * Ld @ rho @ L - LLd @ rho - rho @ LLd)
        return out

    return _rk4_series(rho0, grid, rhs)


def integrate_dephasing(rho0, deph: DephasingCoefficients, H: np.ndarray,
                        L: np.ndarray) -> DensitySeries:
    """Dephasing-family master equation

    d rho/dt = -i[H, rho] + f(t)[L rho, L] + conj(f)[L, rho L]
               + g(t)[rho, L] + conj(g)[L, rho]

    valid for L = L+ with [L, H] = i*kappa*1 (kappa = 0 covers commuting models).
    """
    L = np.asarray(L, dtype=complex)
    H = np.asarray(H, dtype=complex)
    rho0 = _as_rho(rho0, L.shape[0])
    if np.max(np.abs(L - L.conj().T)) > 1e-12:
        raise ModelMismatchError("dephasing model requires L = L+")
    comm = L @ H - H @ L
    target = 1j * deph.kappa * np.eye(L.shape[0])
    if np.max(np.abs(comm - target)) > 1e-12:
        raise ModelMismatchError(
            "dephasing model requires [L, H] = i*kappa*identity")
    f_half = _half_step_table(deph.f)
    g_half = _half_step_table(deph.g)

    def rhs(j, rho):
        ft = f_half[j]
        gt = g_half[j]
        Lr = L @ rho
        rL = rho @ L
        out = -1j * (H @ rho - rho @ H)
        out += ft * (Lr @ L - L @ Lr)
        out += np.conj(ft) * (L @ rL - rL @ L)
        out += gt * (rL - Lr)
        out += np.conj(gt) * (Lr - rL)
        return out

    return _rk4_series(rho0, grid=deph.grid, rhs=rhs, track_leakage=False)
