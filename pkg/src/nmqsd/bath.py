"""Bath models and their correlation functions on a shared time grid.

Two spectral families are provided. ``DiscreteModes`` is a finite set of
harmonic modes at temperature T, for which everything is exact and a
brute-force system+bath oracle exists. ``ExponentialKernel`` is the
Ornstein-Uhlenbeck family, which admits analytic Markov and ODE limits.

Conventions (hbar = k_B = 1 throughout):

    alpha1(tau) = sum_l (nbar_l + 1) |g_l|^2 exp(-i w_l tau)
    alpha2(tau) = sum_l  nbar_l      |g_l|^2 exp(+i w_l tau)

for tau >= 0, extended to negative arguments by alpha_i(-tau) =
conj(alpha_i(tau)).  The memory kernel driving the homogeneous propagator
equation is beta(s, s') = alpha2(s - s') - alpha1(s' - s), a function of
s - s' only.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DivergentOccupationError, ShapeError

__all__ = [
    "TimeGrid",
    "Mode",
    "DiscreteModes",
    "ExponentialKernel",
    "BathModel",
    "CorrelationTable",
    "mean_occupation",
    "correlation_table",
    "zero_temperature_limit_check",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*dt, k = 0..n_steps, with t_max = n_steps*dt."""

    t_max: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 2:
            raise ShapeError(f"n_steps must be >= 2, got {self.n_steps}")
        if self.t_max <= 0:
            raise ShapeError(f"t_max must be positive, got {self.t_max}")

    @property
    def dt(self) -> float:
        return self.t_max / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_steps + 1)


@dataclass(frozen=True)
class Mode:
    g: complex
    omega: float


@dataclass(frozen=True)
class DiscreteModes:
    modes: tuple
    temperature: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(Mode(complex(m.g), float(m.omega))
                                                if isinstance(m, Mode) else Mode(complex(m[0]), float(m[1]))
                                                for m in self.modes))
        if self.temperature < 0:
            raise DivergentOccupationError("temperature must be >= 0")
        for m in self.modes:
            if m.omega <= 0:
                raise DivergentOccupationError(
                    f"mode frequency must be positive (nbar diverges), got {m.omega}")


@dataclass(frozen=True)
class ExponentialKernel:
    gamma1: float
    gamma2: float
    kappa: float
    omega_c: float = 0.0

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ShapeError("gamma1 and gamma2 must be >= 0")
        if self.gamma2 > self.gamma1:
            raise ShapeError("thermal ordering requires gamma2 <= gamma1")
        if self.kappa <= 0:
            raise ShapeError("kappa must be positive")


BathModel = Union[DiscreteModes, ExponentialKernel]


def mean_occupation(omega: float, temperature: float) -> float:
    """Bose-Einstein occupation 1/(exp(omega/T) - 1); zero at T = 0."""
    if omega <= 0:
        raise DivergentOccupationError(f"omega must be positive, got {omega}")
    if temperature < 0:
        raise DivergentOccupationError(f"temperature must be >= 0, got {temperature}")
    if temperature == 0:
        return 0.0
    return 1.0 / np.expm1(omega / temperature)


class _ModeSum:
    """Vectorized sum_l c_l exp(sign * i w_l tau); picklable for worker pools."""

    def __init__(self, coeffs, omegas, sign):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.omegas = np.asarray(omegas, dtype=float)
        self.sign = sign

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        phase = np.exp(self.sign * 1j * np.multiply.outer(tau, self.omegas))
        return phase @ self.coeffs.astype(complex)


class _ExpKernel:
    """c * exp(-kappa tau + sign * i omega_c tau) for tau >= 0; picklable."""

    def __init__(self, c, kappa, omega_c, sign):
        self.c = c
        self.kappa = kappa
        self.omega_c = omega_c
        self.sign = sign

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.c * np.exp((-self.kappa + self.sign * 1j * self.omega_c) * tau)


def _alpha_callables(bath):
    """Return (alpha1, alpha2) as vectorized callables valid for tau >= 0."""
    if isinstance(bath, DiscreteModes):
        g2 = np.array([abs(m.g) ** 2 for m in bath.modes])
        om = np.array([m.omega for m in bath.modes])
        nbar = np.array([mean_occupation(m.omega, bath.temperature) for m in bath.modes])
        return _ModeSum((nbar + 1.0) * g2, om, -1), _ModeSum(nbar * g2, om, +1)

    if isinstance(bath, ExponentialKernel):
        return (_ExpKernel(0.5 * bath.gamma1 * bath.kappa, bath.kappa, bath.omega_c, -1),
                _ExpKernel(0.5 * bath.gamma2 * bath.kappa, bath.kappa, bath.omega_c, +1))

    raise TypeError(f"unknown bath model {type(bath)!r}")


@dataclass(frozen=True)
class CorrelationTable:
    """Sampled bath correlations on a grid plus continuous evaluators.

    ``alpha1`` and ``alpha2`` are sampled at tau_k = k*dt for k = 0..n_steps;
    negative arguments follow the Hermitian extension alpha_i(-tau) =
    conj(alpha_i(tau)).
    """

    grid: TimeGrid
    alpha1: np.ndarray
    alpha2: np.ndarray
    _alpha1_fn: object
    _alpha2_fn: object

    def alpha1_at(self, tau):
        """alpha1 at arbitrary real tau (Hermitian extension for tau < 0)."""
        tau = np.asarray(tau, dtype=float)
        pos = self._alpha1_fn(np.abs(tau))
        return np.where(tau >= 0, pos, np.conj(pos))

    def alpha2_at(self, tau):
        tau = np.asarray(tau, dtype=float)
        pos = self._alpha2_fn(np.abs(tau))
        return np.where(tau >= 0, pos, np.conj(pos))

    def beta(self, s, s_prime):
        """Memory kernel beta(s, s') = alpha2(s - s') - alpha1(s' - s)."""
        s = np.asarray(s, dtype=float)
        s_prime = np.asarray(s_prime, dtype=float)
        return self.alpha2_at(s - s_prime) - self.alpha1_at(s_prime - s)

    def two_sided(self, which: int) -> np.ndarray:
        """alpha_i sampled at m*dt for m = -n..n, as an array of length 2n+1."""
        arr = self.alpha1 if which == 1 else self.alpha2
        return np.concatenate([np.conj(arr[:0:-1]), arr])

    @property
    def alpha_max(self) -> float:
        return float(max(np.abs(self.alpha1[0]), np.abs(self.alpha2[0])))


def correlation_table(bath: BathModel, grid: TimeGrid) -> CorrelationTable:
    """Sample alpha1, alpha2 for the bath on the grid."""
    a1_fn, a2_fn = _alpha_callables(bath)
    taus = grid.times
    return CorrelationTable(grid=grid,
                            alpha1=np.asarray(a1_fn(taus), dtype=complex),
                            alpha2=np.asarray(a2_fn(taus), dtype=complex),
                            _alpha1_fn=a1_fn, _alpha2_fn=a2_fn)


def zero_temperature_limit_check(bath: BathModel, grid: TimeGrid) -> bool:
    """True iff alpha2 vanishes on the grid and alpha1 equals the T=0 mode sum."""
    table = correlation_table(bath, grid)
    if np.max(np.abs(table.alpha2)) != 0.0:
        return False
    if isinstance(bath, DiscreteModes):
        zero_t = correlation_table(
            DiscreteModes(modes=bath.modes, temperature=0.0), grid)
        return bool(np.allclose(table.alpha1, zero_t.alpha1, rtol=0.0, atol=1e-14))
    # Exponential family: alpha2's scale factor is gamma2, alpha1 is already
    # the zero-temperature form.
    return bath.gamma2 == 0.0
