"""Exact few-mode system+bath reference dynamics.

The total Hamiltonian is the rotating-wave model

    H_tot = Omega a+ a + sum_l (conj(g_l) a+ b_l + g_l a b_l+)
            + sum_l w_l b_l+ b_l

on (system dim) x (product of mode dims).  ``evolve_total`` applies the
stepwise matrix exponential literally.  For number-diagonal initial system
states the rotating-wave coupling conserves total excitation number, so
``reduced_series`` evolves each total-number block by exact diagonalization
instead; both paths are cross-checked in the tests.
"""

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .bath import TimeGrid, mean_occupation
from .errors import DimensionError, ShapeError, TruncationError
from .fock import DensityMatrix, LEAKAGE_THRESHOLD
from .master import DensitySeries

__all__ = [
    "OracleConfig",
    "OracleMode",
    "thermal_bath_state",
    "evolve_total",
    "reduced_state",
    "reduced_series",
    "total_energy",
]

MAX_TOTAL_DIM = 4096
LEAKAGE_TOL = 1e-6


@dataclass(frozen=True)
class OracleMode:
    g: complex
    omega: float
    mode_dim: int


@dataclass(frozen=True)
class OracleConfig:
    system_dim: int
    modes: tuple
    temperature: float
    Omega: float
    leakage_tol: float = LEAKAGE_TOL

    def __post_init__(self):
        object.__setattr__(
            self, "modes",
            tuple(m if isinstance(m, OracleMode)
                  else OracleMode(complex(m[0]), float(m[1]), int(m[2]))
                  for m in self.modes))
        total = self.system_dim
        for m in self.modes:
            total *= m.mode_dim
        if total > MAX_TOTAL_DIM:
            raise DimensionError(
                f"total Hilbert dimension {total} exceeds {MAX_TOTAL_DIM}")
        for i, m in enumerate(self.modes):
            leak = self.mode_leakage(i)
            if leak > self.leakage_tol:
                q = self._q(m)
                # smallest dim with q^d <= tol
                suggested = int(np.ceil(np.log(self.leakage_tol) / np.log(q))) if q > 0 else m.mode_dim
                raise TruncationError(
                    f"mode {i} thermal truncation leakage {leak:.3e} exceeds "
                    f"{self.leakage_tol:.1e}; use mode_dim >= {suggested}",
                    suggested_dim=suggested)

    def _q(self, mode) -> float:
        if self.temperature <= 0:
            return 0.0
        return float(np.exp(-mode.omega / self.temperature))

    def mode_leakage(self, i: int) -> float:
        """1 - (1-q) sum_{m<d} q^m = q^d for the truncated Gibbs state."""
        return self._q(self.modes[i]) ** self.modes[i].mode_dim

    @property
    def total_dim(self) -> int:
        d = self.system_dim
        for m in self.modes:
            d *= m.mode_dim
        return d

    @property
    def dims(self) -> tuple:
        return (self.system_dim,) + tuple(m.mode_dim for m in self.modes)


def _mode_gibbs_weights(config, i):
    m = config.modes[i]
    q = config._q(m)
    w = q ** np.arange(m.mode_dim)
    return w / w.sum()


def thermal_bath_state(config: OracleConfig) -> DensityMatrix:
    """Tensor product of truncated per-mode Gibbs states (unit trace)."""
    rho = np.array([[1.0]], dtype=complex)
    for i in range(len(config.modes)):
        rho = np.kron(rho, np.diag(_mode_gibbs_weights(config, i)).astype(complex))
    return DensityMatrix(data=rho, time=0.0)


def _ladder(dim):
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def total_hamiltonian(config: OracleConfig) -> np.ndarray:
    dims = config.dims
    n_factors = len(dims)

    def embed(op, pos):
        out = np.array([[1.0]], dtype=complex)
        for j in range(n_factors):
            out = np.kron(out, op if j == pos else np.eye(dims[j], dtype=complex))
        return out

    a_sys = _ladder(config.system_dim)
    h = config.Omega * embed(a_sys.conj().T @ a_sys, 0)
    for i, m in enumerate(config.modes):
        b = _ladder(m.mode_dim)
        h += m.omega * embed(b.conj().T @ b, i + 1)
        a_full = embed(a_sys, 0)
        b_full = embed(b, i + 1)
        h += np.conj(m.g) * (a_full.conj().T @ b_full) + m.g * (a_full @ b_full.conj().T)
    return h


def evolve_total(rho_tot, config: OracleConfig, grid: TimeGrid):
    """Stepwise-exponential evolution of the full density matrix.

    Returns the list of total-state DensityMatrix objects on the grid; the
    propagator expm(-i H dt) is computed once and reused.
    """
    rho = np.array(getattr(rho_tot, "data", rho_tot), dtype=complex)
    if rho.shape != (config.total_dim, config.total_dim):
        raise ShapeError(f"total state has shape {rho.shape}, "
                         f"expected {(config.total_dim,) * 2}")
    h = total_hamiltonian(config)
    u = scipy.linalg.expm(-1j * h * grid.dt)
    out = [DensityMatrix(data=rho.copy(), time=0.0)]
    for k in range(grid.n_steps):
        rho = u @ rho @ u.conj().T
        out.append(DensityMatrix(data=rho.copy(), time=(k + 1) * grid.dt))
    return out


def reduced_state(rho_tot, config: OracleConfig) -> DensityMatrix:
    """Partial trace over all mode factors."""
    rho = np.array(getattr(rho_tot, "data", rho_tot), dtype=complex)
    time = getattr(rho_tot, "time", 0.0)
    d_sys = config.system_dim
    d_bath = config.total_dim // d_sys
    if rho.shape != (config.total_dim, config.total_dim):
        raise ShapeError(f"total state has shape {rho.shape}, "
                         f"expected {(config.total_dim,) * 2}")
    r = rho.reshape(d_sys, d_bath, d_sys, d_bath)
    return DensityMatrix(data=np.einsum("abcb->ac", r), time=time)


def total_energy(rho_tot, config: OracleConfig) -> float:
    h = total_hamiltonian(config)
    rho = np.array(getattr(rho_tot, "data", rho_tot), dtype=complex)
    return float(np.real(np.trace(h @ rho)))


# ---------------------------------------------------------------------------
# total-excitation-number block evolution
# ---------------------------------------------------------------------------

def _number_blocks(config):
    """Group product-basis states (n_sys, m_1, ..., m_L) by total quanta."""
    dims = config.dims
    blocks = {}
    for state in itertools.product(*[range(d) for d in dims]):
        blocks.setdefault(sum(state), []).append(state)
    return blocks


def _block_hamiltonian(config, states):
    index = {s: i for i, s in enumerate(states)}
    nb = len(states)
    h = np.zeros((nb, nb), dtype=complex)
    for s, i in index.items():
        n_sys = s[0]
        h[i, i] = config.Omega * n_sys + sum(
            m.omega * s[1 + l] for l, m in enumerate(config.modes))
        for l, m in enumerate(config.modes):
            # conj(g) a+ b_l : (n_sys, m_l) -> (n_sys+1, m_l-1)
            if s[1 + l] > 0 and n_sys + 1 < config.system_dim:
                to = list(s)
                to[0] += 1
                to[1 + l] -= 1
                jj = index[tuple(to)]
                amp = np.conj(m.g) * np.sqrt((n_sys + 1) * s[1 + l])
                h[jj, i] += amp
                h[i, jj] += np.conj(amp)
    return h


def reduced_series(config: OracleConfig, system_populations, grid: TimeGrid,
                   weight_cutoff: float = 1e-14):
    """Reduced system dynamics for a number-diagonal initial system state.

    ``system_populations`` are the diagonal entries of the initial system
    density matrix (e.g. a Fock state).  The initial total state is that
    diagonal system state tensored with the thermal bath; such states are
    block diagonal in the conserved total excitation number, so each block is
    diagonalized once and evolved by phases.  Returns (DensitySeries,
    energy_series).
    """
    pops = np.asarray(system_populations, dtype=float)
    if len(pops) != config.system_dim or abs(pops.sum() - 1.0) > 1e-12 or np.any(pops < 0):
        raise ShapeError("system_populations must be a length-system_dim "
                         "probability vector")
    mode_w = [_mode_gibbs_weights(config, i) for i in range(len(config.modes))]
    times = grid.times
    n_t = len(times)
    d_sys = config.system_dim
    rho_sys = np.zeros((n_t, d_sys, d_sys), dtype=complex)
    energy = np.zeros(n_t)

    diag = np.zeros((n_t, d_sys))
    for total_n, states in _number_blocks(config).items():
        w = np.array([pops[s[0]] * np.prod([mode_w[l][s[1 + l]]
                                            for l in range(len(config.modes))])
                      for s in states])
        block_weight = w.sum()
        if block_weight < weight_cutoff:
            continue
        h = _block_hamiltonian(config, states)
        evals, vecs = np.linalg.eigh(h)
        phases = np.exp(-1j * np.multiply.outer(times, evals))   # (n_t, nb)
        sys_idx = np.array([s[0] for s in states])
        # Two block states sharing a bath configuration share the system level
        # (the block fixes the total number), so the reduced state from a
        # number-diagonal initial condition is exactly diagonal and the
        # partial trace reduces to grouping populations by system level.
        indicator = (sys_idx[:, None] == np.arange(d_sys)[None, :]).astype(float)
        occupied = np.nonzero(w > weight_cutoff * max(block_weight, 1.0))[0]
        for j in occupied:
            c = np.conj(vecs[j, :])                    # <e_k | s_j>
            amp = phases * c[None, :]                  # eigenbasis amplitudes
            psi = amp @ vecs.T                         # psi[t, i] in block basis
            diag += w[j] * ((np.abs(psi) ** 2) @ indicator)
            energy += w[j] * ((np.abs(amp) ** 2) @ evals)
    idx = np.arange(d_sys)
    rho_sys[:, idx, idx] = diag
    herm = np.array([float(np.max(np.abs(r - r.conj().T))) for r in rho_sys])
    trd = np.array([float(abs(np.trace(r) - 1.0)) for r in rho_sys])
    mine = np.array([float(np.linalg.eigvalsh(0.5 * (r + r.conj().T))[0])
                     for r in rho_sys])
    leak = float(np.max(np.real(rho_sys[:, -1, -1] + rho_sys[:, -2, -2]))) \
        if d_sys >= 2 else 0.0
    series = DensitySeries(grid=grid, states=rho_sys, herm_defect=herm,
                           trace_defect=trd, min_eigenvalue=mine,
                           leakage=leak, leakage_flag=leak > LEAKAGE_THRESHOLD)
    return series, energy
