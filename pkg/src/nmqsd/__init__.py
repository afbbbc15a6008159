"""Finite-temperature non-Markovian quantum trajectories and the exact
convolutionless master equation for the damped harmonic oscillator."""

from .bath import (BathModel, CorrelationTable, DiscreteModes, ExponentialKernel,
                   Mode, TimeGrid, correlation_table, mean_occupation,
                   zero_temperature_limit_check)
from .errors import (ConfigValidationError, DimensionError,
                     DivergentOccupationError, InsufficientSampleError,
                     InvalidRateError, KernelNotAdmissibleError,
                     ModelMismatchError, NmqsdError, NonlinearBlowupError,
                     PropagationDivergedError, ShapeError, SolverSingularError,
                     StagingError, TruncationError)
from .fock import (DensityMatrix, FockSpace, StateVector, build_fock_space,
                   density_diagnostics, trace_distance, truncation_leakage)
from .kernels import (CoefficientTable, DephasingCoefficients, FGHIRows, FjSlice,
                      KernelSolution, TRoute, URow, dephasing_coefficients,
                      march_homogeneous, master_coefficients,
                      master_coefficients_dense,
                      master_coefficients_zero_temperature, solve_FGHI,
                      solve_fj_s_route, solve_fj_t_route, solve_sources, solve_u)
from .master import (DensitySeries, integrate_convolutionless,
                     integrate_dephasing, integrate_lindblad)
from .noise import (NoiseGenerator, NoisePath, StatReport, sample_noise,
                    verify_noise_statistics, write_noise_csv)
from .oracle import (OracleConfig, OracleMode, evolve_total, reduced_series,
                     reduced_state, thermal_bath_state, total_energy)
from .trajectories import (EnsembleResult, NovikovReport, OperatorAssembly,
                           TrajectoryKernels, assemble_O, ensemble_average,
                           novikov_check, propagate_trajectory, run_ensemble)

__version__ = "0.1.0"
