"""Truncated Fock-space operators and density-matrix diagnostics."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ShapeError

__all__ = [
    "FockSpace",
    "DensityMatrix",
    "StateVector",
    "build_fock_space",
    "density_diagnostics",
    "trace_distance",
    "truncation_leakage",
]

# Default combined population of the top two Fock levels above which an
# evolution is flagged as leaking out of the truncated space.
LEAKAGE_THRESHOLD = 1e-6


@dataclass(frozen=True)
class FockSpace:
    """Truncated oscillator space with ladder operators on dim levels."""

    dim: int
    annihilator: np.ndarray
    creator: np.ndarray
    number_op: np.ndarray


@dataclass(frozen=True)
class DensityMatrix:
    data: np.ndarray
    time: float = 0.0


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    time: float = 0.0


def _as_matrix(rho):
    data = np.asarray(getattr(rho, "data", rho), dtype=complex)
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {data.shape}")
    return data


def build_fock_space(dim: int) -> FockSpace:
    """Ladder operators on the dim lowest Fock states; requires dim >= 2."""
    if int(dim) != dim or dim < 2:
        raise DimensionError(f"Fock dimension must be an integer >= 2, got {dim}")
    dim = int(dim)
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)
    adag = a.conj().T
    return FockSpace(dim=dim, annihilator=a, creator=adag, number_op=adag @ a)


def density_diagnostics(rho):
    """Return (herm_defect, trace_defect, min_eigenvalue) for a density matrix.

    The minimum eigenvalue is taken from the Hermitized matrix (rho+rho^dag)/2
    so it is well defined for slightly non-Hermitian numerical input.
    """
    data = _as_matrix(rho)
    herm_defect = float(np.max(np.abs(data - data.conj().T)))
    trace_defect = float(abs(np.trace(data) - 1.0))
    herm = 0.5 * (data + data.conj().T)
    min_eig = float(np.linalg.eigvalsh(herm)[0])
    return herm_defect, trace_defect, min_eig


def trace_distance(rho1, rho2) -> float:
    """Half the sum of singular values of the difference of two states."""
    d1 = _as_matrix(rho1)
    d2 = _as_matrix(rho2)
    if d1.shape != d2.shape:
        raise ShapeError(f"dimension mismatch: {d1.shape} vs {d2.shape}")
    return float(0.5 * np.sum(np.linalg.svd(d1 - d2, compute_uv=False)))


def truncation_leakage(state) -> float:
    """Combined population of the top two levels of a state or density matrix."""
    arr = np.asarray(getattr(state, "data", getattr(state, "amplitudes", state)))
    if arr.ndim == 1:
        return float(np.abs(arr[-1]) ** 2 + np.abs(arr[-2]) ** 2)
    return float(np.real(arr[-1, -1] + arr[-2, -2]))
