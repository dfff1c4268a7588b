"""Distribution steering for scalar linear systems via truncated moments."""

from .dynamics import (SystemSchedule, binomial_table, decay, deconvolve,
                       propagate, transition_matrix)
from .ensemble import (EnsembleState, EnvelopeViolation, advance,
                       envelope_scale, rejection_sample, sample_distribution,
                       steer_ensemble)
from .kernels import backend
from .moments import (Empirical, Gaussian, Laplace, Mixture, RawMoments,
                      as_moments, distribution_moments, empirical_moments,
                      hankel_matrix, lyapunov_consistent, realizable)
from .planner import (CostSpec, Energy, EnergyPlusState, GeneralCost,
                      InfeasibleAtZero, InfeasibleError, InfeasibleStart,
                      NoFeasibleWaitingTime, PlanContext, SensitivityReport,
                      Smoothness, SteeringPlan, cost_gradient, cost_value,
                      max_terminal_weight, moment_gap, optimize_weights, plan,
                      project_weights, smoothness_hessian,
                      terminal_control_sensitivity, waiting_time)
from .realize import (CauchyRef, ConvergenceError, DensityEstimate,
                      GaussianRef, InfeasibleLambda, QuadratureGrid,
                      build_grid, default_reference, dual_gradient,
                      dual_objective, make_density, moment_matrix,
                      moment_residuals, multiplicities, realize_control,
                      solve_generator, squared_hellinger, write_density_csv)

__version__ = "0.1.0"
