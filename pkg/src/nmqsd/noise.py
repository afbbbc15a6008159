"""Colored complex Gaussian noise pairs (z*, w*) with prescribed correlations.

The stored arrays are the conjugated processes z*_t and w*_t that enter the
trajectory equation.  Writing z = conj(z*), the statistics are

    E[z_t] = 0,  E[z_t z_s] = 0,  E[z_t conj(z_s)] = alpha1(t - s),

and the same for w with alpha2.  This is the orientation fixed by the
discrete-mode construction z*_t = -i sum_l sqrt(nbar_l+1) conj(g_l) z*_l
exp(+i w_l t) and is the one under which the linear unraveling reproduces the
reduced dynamics (trace preservation of the ensemble mean).

Noises are circularly symmetric: each standard complex normal is
(x + iy)/sqrt(2) with independent standard normals x, y.  Streams are
counter-based (Philox keyed by (seed, stream_id)) so ensembles are
reproducible bit-for-bit regardless of generation order or worker count.
"""

from dataclasses import dataclass

import numpy as np

from .bath import BathModel, CorrelationTable, DiscreteModes, mean_occupation
from .errors import InsufficientSampleError, KernelNotAdmissibleError, ShapeError

__all__ = [
    "NoisePath",
    "NoiseGenerator",
    "StatReport",
    "sample_noise",
    "verify_noise_statistics",
    "write_noise_csv",
]

_MASK64 = (1 << 64) - 1
CHOLESKY_JITTER = 1e-12


@dataclass(frozen=True)
class NoisePath:
    grid: object
    z_star: np.ndarray
    w_star: np.ndarray
    seed: int
    stream_id: int


def _stream_rng(seed: int, stream_id: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, stream_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _standard_complex(rng, n):
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)


def _covariance_factor(alpha_fn, times, label):
    """Cholesky factor of C[j,k] = alpha(t_j - t_k), with diagonal jitter."""
    cov = alpha_fn(np.subtract.outer(times, times))
    scale = float(np.abs(cov[0, 0]))
    if scale == 0.0 and np.max(np.abs(cov)) == 0.0:
        return None  # identically zero kernel: the process is exactly zero
    try:
        return np.linalg.cholesky(cov + CHOLESKY_JITTER * scale * np.eye(len(times)))
    except np.linalg.LinAlgError:
        raise KernelNotAdmissibleError(
            f"{label} covariance is not positive semidefinite beyond jitter") from None


class NoiseGenerator:
    """Reusable sampler; factors the covariances (or mode data) once."""

    def __init__(self, correlations: CorrelationTable, method: str = "cholesky",
                 bath: BathModel = None):
        if method not in ("cholesky", "discrete_modes"):
            raise ValueError(f"unknown method {method!r}")
        self.correlations = correlations
        self.method = method
        self.grid = correlations.grid
        times = self.grid.times
        if method == "cholesky":
            self._chol_z = _covariance_factor(correlations.alpha1_at, times, "alpha1")
            self._chol_w = _covariance_factor(correlations.alpha2_at, times, "alpha2")
        else:
            if not isinstance(bath, DiscreteModes):
                raise ShapeError("discrete_modes sampling requires a DiscreteModes bath")
            g = np.array([m.g for m in bath.modes])
            om = np.array([m.omega for m in bath.modes])
            nbar = np.array([mean_occupation(m.omega, bath.temperature) for m in bath.modes])
            # z*_t = -i sum_l sqrt(nbar+1) g_l* z_l* e^{+i w t}; w*_t uses e^{-i w t}
            self._z_weights = (-1j) * np.sqrt(nbar + 1.0) * np.conj(g)
            self._w_weights = (-1j) * np.sqrt(nbar) * np.conj(g)
            self._phase_z = np.exp(1j * np.multiply.outer(times, om))
            self._phase_w = np.exp(-1j * np.multiply.outer(times, om))

    def sample(self, seed: int, stream_id: int) -> NoisePath:
        rng = _stream_rng(seed, stream_id)
        n = self.grid.n_steps + 1
        if self.method == "cholesky":
            xi_z = _standard_complex(rng, n)
            xi_w = _standard_complex(rng, n)
            z = self._chol_z @ xi_z if self._chol_z is not None else np.zeros(n, complex)
            w = self._chol_w @ xi_w if self._chol_w is not None else np.zeros(n, complex)
            z_star, w_star = np.conj(z), np.conj(w)
        else:
            n_modes = len(self._z_weights)
            zl = _standard_complex(rng, n_modes)
            wl = _standard_complex(rng, n_modes)
            z_star = self._phase_z @ (self._z_weights * np.conj(zl))
            w_star = self._phase_w @ (self._w_weights * np.conj(wl))
        return NoisePath(grid=self.grid, z_star=z_star, w_star=w_star,
                         seed=seed, stream_id=stream_id)

    def sample_block(self, seed: int, stream_ids) -> tuple:
        """Stack sampled paths into (Z*, W*) arrays of shape (M, n_steps+1)."""
        paths = [self.sample(seed, sid) for sid in stream_ids]
        return (np.array([p.z_star for p in paths]),
                np.array([p.w_star for p in paths]))


def sample_noise(correlations: CorrelationTable, seed: int, stream_id: int,
                 method: str = "cholesky", bath: BathModel = None) -> NoisePath:
    """One realization of the paired processes for (seed, stream_id)."""
    return NoiseGenerator(correlations, method=method, bath=bath).sample(seed, stream_id)


@dataclass(frozen=True)
class StatReport:
    n_paths: int
    deviation_z_cov: float
    deviation_z_pseudo: float
    deviation_w_cov: float
    deviation_w_pseudo: float
    deviation_cross: float
    sigma_bound: float

    @property
    def max_deviation(self) -> float:
        return max(self.deviation_z_cov, self.deviation_z_pseudo,
                   self.deviation_w_cov, self.deviation_w_pseudo,
                   self.deviation_cross)

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.sigma_bound


def verify_noise_statistics(paths, correlations: CorrelationTable,
                            n_lattice: int = 8) -> StatReport:
    """Compare sample covariances against the target kernels on a (t,s) lattice.

    Deviations are max-abs over the lattice of the sample estimates of
    E[z_t conj(z_s)] - alpha1(t-s), E[z_t z_s], E[w_t conj(w_s)] - alpha2(t-s),
    E[w_t w_s] and the z/w cross covariance.  The reported bound is the
    5-sigma Monte Carlo scale 5*alpha_max/sqrt(M).
    """
    if hasattr(paths, "z_star"):
        paths = [paths]
    paths = list(paths)
    m = len(paths)
    if m < 100:
        raise InsufficientSampleError(f"need at least 100 paths, got {m}")
    zs = np.array([p.z_star for p in paths])  # stored z*; z = conj(z*)
    ws = np.array([p.w_star for p in paths])
    n = zs.shape[1] - 1
    idx = np.unique(np.linspace(0, n, n_lattice).astype(int))
    times = correlations.grid.times[idx]
    z = np.conj(zs[:, idx])
    w = np.conj(ws[:, idx])

    tau = np.subtract.outer(times, times)
    a1 = correlations.alpha1_at(tau)
    a2 = correlations.alpha2_at(tau)

    cov_z = z.conj().T @ z / m          # [s, t] -> E[conj(z_s) z_t]; transpose below
    cov_z = cov_z.T                     # [t, s] = E[z_t conj(z_s)]
    pse_z = (z.T @ z) / m               # E[z_t z_s]
    cov_w = (w.conj().T @ w / m).T
    pse_w = (w.T @ w) / m
    cross = (zs[:, idx].T @ np.conj(ws[:, idx])) / m  # E[z*_t conj(w*_s)]

    sigma_bound = 5.0 * max(correlations.alpha_max, 0.0) / np.sqrt(m)
    return StatReport(
        n_paths=m,
        deviation_z_cov=float(np.max(np.abs(cov_z - a1))),
        deviation_z_pseudo=float(np.max(np.abs(pse_z))),
        deviation_w_cov=float(np.max(np.abs(cov_w - a2))),
        deviation_w_pseudo=float(np.max(np.abs(pse_w))),
        deviation_cross=float(np.max(np.abs(cross))),
        sigma_bound=float(sigma_bound),
    )


def write_noise_csv(path: NoisePath, stream) -> None:
    """Dump one path as CSV columns t, re/im z*, re/im w*."""
    stream.write("t,re_z_star,im_z_star,re_w_star,im_w_star\n")
    for t, z, w in zip(path.grid.times, path.z_star, path.w_star):
        stream.write(f"{t:.17g},{z.real:.17g},{z.imag:.17g},{w.real:.17g},{w.imag:.17g}\n")
