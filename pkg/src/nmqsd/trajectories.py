"""Linear non-Markovian QSD trajectories for the damped oscillator.

The linear equation is integrated as written (no normalization):

    d psi/dt = -i Omega a+ a psi + a z*_t psi - a+ Obar1 psi
               + a+ w*_t psi - a Obar2 psi,

with Obar1 = s1(t) a + n1(t) 1 and Obar2 = s2(t) a+ + n2(t) 1, where s_i are
memory integrals of the f kernels and n_i are double integrals of the j
kernels against the stored noise.  Colored noise makes this a random ODE, so
a deterministic second-order scheme (Heun predictor-corrector on the shared
grid) applies.  Kernel contractions are noise independent and precomputed
once per grid; ensembles are reduced in fixed-size chunks in stream order so
results are bit-identical for any worker count.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bath import CorrelationTable
from .errors import (InsufficientSampleError, PropagationDivergedError,
                     ShapeError, StagingError)
from .fock import FockSpace, LEAKAGE_THRESHOLD
from .kernels import solve_fj_s_route, _trap_weights
from .master import DensitySeries
from .noise import NoiseGenerator, NoisePath

__all__ = [
    "TrajectoryKernels",
    "OperatorAssembly",
    "EnsembleResult",
    "assemble_O",
    "propagate_trajectory",
    "ensemble_average",
    "run_ensemble",
    "novikov_check",
    "NovikovReport",
]

DEFAULT_CHUNK = 256


class TrajectoryKernels:
    """Noise-independent kernel contractions for every grid time.

    For each time index k this holds s1, s2 (scalar memory integrals of f1,
    f2) and the contracted vectors J_i(t_k, s') = int alpha_i(t_k - s)
    j_i(t_k, s, s') ds, from which the noise functionals are single
    quadratures against a stored path.
    """

    def __init__(self, correlations: CorrelationTable, Omega: float):
        self.correlations = correlations
        self.Omega = Omega
        self.grid = correlations.grid
        n = self.grid.n_steps
        dt = self.grid.dt
        a1 = correlations.alpha1
        a2 = correlations.alpha2
        self.s1 = np.zeros(n + 1, dtype=complex)
        self.s2 = np.zeros(n + 1, dtype=complex)
        self.J1 = [np.zeros(1, dtype=complex)]
        self.J2 = [np.zeros(1, dtype=complex)]
        self.final_slice = None
        for k in range(1, n + 1):
            sl = solve_fj_s_route(correlations, Omega, k)
            w = _trap_weights(k, dt)
            wa1 = w * a1[k::-1]
            wa2 = w * a2[k::-1]
            self.s1[k] = np.dot(wa1, sl.f1)
            self.s2[k] = np.dot(wa2, sl.f2)
            self.J1.append(wa1 @ sl.j1)
            self.J2.append(wa2 @ sl.j2)
            if k == n:
                self.final_slice = sl
        if n >= 1:
            # pre-weighted J vectors: n_i(t_k) = J_i[k] . noise (plain dot)
            self.J1w = [None] + [self.J1[k] * _trap_weights(k, dt) for k in range(1, n + 1)]
            self.J2w = [None] + [self.J2[k] * _trap_weights(k, dt) for k in range(1, n + 1)]
        else:
            self.J1w = [None]
            self.J2w = [None]

    def noise_functionals(self, k: int, z_star: np.ndarray, w_star: np.ndarray):
        """(n1, n2) at time index k for one path (or batch, shape (M, n+1))."""
        if k == 0:
            if z_star.ndim == 2:
                m = z_star.shape[0]
                return np.zeros(m, complex), np.zeros(m, complex)
            return 0.0 + 0.0j, 0.0 + 0.0j
        if k >= len(self.J1w):
            raise StagingError(f"kernel slices not staged for t_index {k}")
        if z_star.ndim == 2:
            n1 = w_star[:, :k + 1] @ self.J1w[k]
            n2 = z_star[:, :k + 1] @ self.J2w[k]
        else:
            n1 = np.dot(self.J1w[k], w_star[:k + 1])
            n2 = np.dot(self.J2w[k], z_star[:k + 1])
        return n1, n2


@dataclass(frozen=True)
class OperatorAssembly:
    t_index: int
    s1: complex
    s2: complex
    n1: complex
    n2: complex
    Obar1: np.ndarray
    Obar2: np.ndarray


def assemble_O(kernels: TrajectoryKernels, noise: NoisePath, fock: FockSpace,
               t_index: int) -> OperatorAssembly:
    """Assembled memory operators Obar1 = s1 a + n1, Obar2 = s2 a+ + n2."""
    k = int(t_index)
    if k >= len(kernels.s1):
        raise StagingError(f"kernel slices not staged for t_index {k}")
    n1, n2 = kernels.noise_functionals(k, noise.z_star, noise.w_star)
    eye = np.eye(fock.dim, dtype=complex)
    s1 = complex(kernels.s1[k])
    s2 = complex(kernels.s2[k])
    return OperatorAssembly(
        t_index=k, s1=s1, s2=s2, n1=complex(n1), n2=complex(n2),
        Obar1=s1 * fock.annihilator + complex(n1) * eye,
        Obar2=s2 * fock.creator + complex(n2) * eye)


def _batch_rhs(psi, k, kernels, zs, ws, n1, n2, ops):
    """RHS of the linear QSD equation for a batch psi of shape (M, d)."""
    a_psi = psi @ ops["aT"]
    ad_psi = psi @ ops["adT"]
    n_psi = psi @ ops["nT"]
    aad_psi = psi @ ops["aadT"]
    out = (-1j * kernels.Omega) * n_psi
    out += zs[:, None] * a_psi + ws[:, None] * ad_psi
    out -= kernels.s1[k] * n_psi + n1[:, None] * ad_psi
    out -= kernels.s2[k] * aad_psi + n2[:, None] * a_psi
    return out


def _ops_for(fock: FockSpace):
    return {
        "aT": fock.annihilator.T.copy(),
        "adT": fock.creator.T.copy(),
        "nT": fock.number_op.T.copy(),
        "aadT": (fock.annihilator @ fock.creator).T.copy(),
    }


def _propagate_batch(psi0, z_star, w_star, kernels, fock):
    """Heun-propagate a batch; returns states of shape (M, n+1, d)."""
    m = z_star.shape[0]
    n = kernels.grid.n_steps
    dt = kernels.grid.dt
    ops = _ops_for(fock)
    psis = np.empty((m, n + 1, fock.dim), dtype=complex)
    psi = np.broadcast_to(psi0, (m, fock.dim)).astype(complex)
    psis[:, 0] = psi
    n1_all = [kernels.noise_functionals(k, z_star, w_star) for k in range(n + 1)]
    for k in range(n):
        n1k, n2k = n1_all[k]
        n1k1, n2k1 = n1_all[k + 1]
        r1 = _batch_rhs(psi, k, kernels, z_star[:, k], w_star[:, k], n1k, n2k, ops)
        pred = psi + dt * r1
        r2 = _batch_rhs(pred, k + 1, kernels, z_star[:, k + 1], w_star[:, k + 1],
                        n1k1, n2k1, ops)
        psi = psi + 0.5 * dt * (r1 + r2)
        psis[:, k + 1] = psi
    if not np.all(np.isfinite(psis)):
        raise PropagationDivergedError("NaN/Inf in propagated trajectory batch")
    return psis


def propagate_trajectory(psi0, noise: NoisePath, kernels: TrajectoryKernels,
                         Omega: float, fock: FockSpace) -> np.ndarray:
    """Propagate one trajectory; returns state amplitudes of shape (n+1, dim).

    ``Omega`` must match the value the kernels were built with (the free
    rotation is part of the staged kernel data).
    """
    if Omega != kernels.Omega:
        raise ShapeError("Omega does not match the staged kernels")
    amps = np.asarray(getattr(psi0, "amplitudes", psi0), dtype=complex)
    if amps.shape != (fock.dim,):
        raise ShapeError(f"psi0 has shape {amps.shape}, expected ({fock.dim},)")
    batch = _propagate_batch(amps, noise.z_star[None, :], noise.w_star[None, :],
                             kernels, fock)
    return batch[0]


@dataclass
class EnsembleResult:
    grid: object
    rho_series: DensitySeries
    n_trajectories: int
    norm_mean: np.ndarray
    norm_var: np.ndarray

    @property
    def trace_drift(self) -> float:
        return float(np.max(np.abs(self.norm_mean - 1.0)))


def ensemble_average(trajectories, grid=None) -> EnsembleResult:
    """Unnormalized ensemble mean rho(t) = (1/M) sum |psi><psi| (linear unraveling)."""
    if isinstance(trajectories, np.ndarray) and trajectories.ndim == 3:
        stacks = trajectories
    else:
        trajectories = list(trajectories)
        shapes = {t.shape for t in trajectories}
        if len(shapes) != 1:
            raise ShapeError(f"trajectories have mismatched shapes: {shapes}")
        stacks = np.array(trajectories)
    m = stacks.shape[0]
    rho = np.einsum("mki,mkj->kij", stacks, stacks.conj()) / m
    norms = np.sum(np.abs(stacks) ** 2, axis=2)
    return _ensemble_from_rho(rho, norms.mean(axis=0), norms.var(axis=0), m, grid)


def _ensemble_from_rho(rho, norm_mean, norm_var, m, grid):
    herm = np.array([float(np.max(np.abs(r - r.conj().T))) for r in rho])
    trd = np.abs(np.einsum("kii->k", rho) - 1.0).real
    mine = np.array([float(np.linalg.eigvalsh(0.5 * (r + r.conj().T))[0]) for r in rho])
    leak = float(np.max(np.real(rho[:, -1, -1] + rho[:, -2, -2])))
    series = DensitySeries(grid=grid, states=rho, herm_defect=herm,
                           trace_defect=np.asarray(trd, dtype=float),
                           min_eigenvalue=mine,
                           leakage=leak, leakage_flag=leak > LEAKAGE_THRESHOLD)
    return EnsembleResult(grid=grid, rho_series=series, n_trajectories=m,
                          norm_mean=norm_mean, norm_var=norm_var)


def _chunk_job(args):
    (psi0, kernels, fock, gen, seed, start, stop, keep_states) = args
    z, w = gen.sample_block(seed, range(start, stop))
    psis = _propagate_batch(psi0, z, w, kernels, fock)
    rho_sum = np.einsum("mki,mkj->kij", psis, psis.conj())
    norms = np.sum(np.abs(psis) ** 2, axis=2)
    out = {"rho_sum": rho_sum, "norm_sum": norms.sum(axis=0),
           "norm_sq_sum": (norms ** 2).sum(axis=0), "count": stop - start}
    if keep_states:
        out["final_states"] = psis[:, -1, :]
        out["z_star"] = z
        out["w_star"] = w
    return out


def run_ensemble(psi0, kernels: TrajectoryKernels, fock: FockSpace, m: int,
                 seed: int, noise_method: str = "cholesky", bath=None,
                 workers: int = 1, chunk: int = DEFAULT_CHUNK,
                 keep_states: bool = False):
    """Generate and propagate an ensemble of m trajectories.

    Reduction is over fixed-size chunks combined in stream order, so the
    result does not depend on the worker count.  Returns (EnsembleResult,
    extras) where extras holds final states and noises when keep_states is
    set (needed by the Novikov check).
    """
    amps = np.asarray(getattr(psi0, "amplitudes", psi0), dtype=complex)
    gen = NoiseGenerator(kernels.correlations, method=noise_method, bath=bath)
    bounds = [(s, min(s + chunk, m)) for s in range(0, m, chunk)]
    jobs = [(amps, kernels, fock, gen, seed, a, b, keep_states) for a, b in bounds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chunk_job, jobs))
    else:
        results = [_chunk_job(j) for j in jobs]

    n = kernels.grid.n_steps
    rho = np.zeros((n + 1, fock.dim, fock.dim), dtype=complex)
    norm_sum = np.zeros(n + 1)
    norm_sq = np.zeros(n + 1)
    for res in results:  # fixed chunk order: bitwise reproducible
        rho += res["rho_sum"]
        norm_sum += res["norm_sum"]
        norm_sq += res["norm_sq_sum"]
    rho /= m
    norm_mean = norm_sum / m
    norm_var = norm_sq / m - norm_mean ** 2
    result = _ensemble_from_rho(rho, norm_mean, norm_var, m, kernels.grid)
    extras = None
    if keep_states:
        extras = {
            "final_states": np.concatenate([r["final_states"] for r in results]),
            "z_star": np.concatenate([r["z_star"] for r in results]),
            "w_star": np.concatenate([r["w_star"] for r in results]),
        }
    return result, extras


# ---------------------------------------------------------------------------
# Novikov identity check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NovikovReport:
    n_samples: int
    s_indices: tuple
    deviation: float
    sigma_bound: float

    @property
    def passed(self) -> bool:
        return self.deviation <= self.sigma_bound


def novikov_check(final_states: np.ndarray, z_star: np.ndarray,
                  w_star: np.ndarray, kernels: TrajectoryKernels,
                  n_s_points: int = 6) -> NovikovReport:
    """Monte Carlo test of M[w*_s P_t] = int_0^t ds' conj(alpha2(s-s'))
    R2+(t,s') with R2 = M[O_2 P_t] built from the same ensemble.

    Uses the Novikov (s-dependent) form of the kernel argument.  Both sides
    are averages of per-trajectory quantities; the bound is five times the
    largest entrywise standard error of their difference.
    """
    m = final_states.shape[0]
    if m < 1000:
        raise InsufficientSampleError(f"need at least 1000 trajectories, got {m}")
    grid = kernels.grid
    n = grid.n_steps
    dt = grid.dt
    corr = kernels.correlations
    sl = kernels.final_slice
    if sl is None:
        raise StagingError("kernels carry no final-time f/j slice")
    d = final_states.shape[1]
    w_quad = _trap_weights(n, dt)

    # per-trajectory noise functionals of O2 at every s': (M, n+1)
    n2_all = z_star @ (sl.j2 * w_quad[None, :]).T

    s_idx = tuple(np.unique(np.linspace(0, n, n_s_points).astype(int)))
    times = grid.times
    a_op = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1).astype(complex)

    devs = []
    sigmas = []
    proj = np.einsum("mi,mj->mij", final_states, final_states.conj())  # P_t per traj
    pa = proj @ a_op                                                   # P_t a
    for si in s_idx:
        tau = times[si] - times
        a2c = np.conj(corr.alpha2_at(tau)) * w_quad                    # quadrature row
        # per-trajectory E_m(s) = int ds' a2c(s') [conj(f2) P a + conj(n2') P]
        f_term = np.dot(a2c, np.conj(sl.f2))
        n_term = np.conj(n2_all) @ a2c
        lhs = w_star[:, si][:, None, None] * proj
        rhs = f_term * pa + n_term[:, None, None] * proj
        diff = lhs - rhs
        mean_diff = diff.mean(axis=0)
        devs.append(np.max(np.abs(mean_diff)))
        sigmas.append(np.max(np.std(diff, axis=0)) / np.sqrt(m))
    return NovikovReport(n_samples=m, s_indices=s_idx,
                         deviation=float(np.max(devs)),
                         sigma_bound=float(5.0 * np.max(sigmas)))
