"""Monte Carlo and PDE toolkit for critical super-Brownian motion among
hard Poissonian obstacles: Wiener sausage estimators, branching particle
systems with obstacle or rate killing, log-Laplace equation solvers, and a
desk-scale verification harness for the associated convergence laws."""

__version__ = "0.1.0"

from .brownian import (BrownianPath, bridge_fill, green_function, heat_kernel,
                       refine_path, sample_brownian_path)
from .geometry import Box, Domain
from .intensity import (BoxedIntensity, ConstantIntensity, IntensityField,
                        RadialIntensity, gaussian_bump, half_space_indicator)
from .obstacles import (CoverageError, Environment, exit_time, first_obstacle_hit,
                        generate_environment, sd_scale)
from .particles import (DominationReport, InitialMeasure, MeasureState, ParticleSystem,
                        PointMass, SimulationRun, UniformBall, UniformBox,
                        domination_check, filter_killed, laplace_functional, simulate,
                        simulate_coupled, snapshots_to_jsonl, total_mass_moments,
                        quadratic_variation_check)
from .poisson import sample_poisson_points
from .polyline import PolylineIndex
from .probes import BallIndicator, Constant, GaussianBump, LaplaceProbe, TestFunction
from .rng import RandomSource, stream_for
from .sausage import (EstimateWithError, SausageQuery, intersection_volume, kd_constant,
                      l2_error_h, max_step_for, occupation_time_f, path_time_integral,
                      point_hitting_probability, sausage_volume,
                      sausage_weighted_integral, spitzer_reference,
                      union_intersection_volumes, v_bias_estimate)
from .solver import (GridFunction, SolveSpec, SolverError, export_grid_function,
                     feynman_kac_equivalence_check, l1_distance, laplace_from_w, solve)
from .stats import RateRegression, ks_two_sample, rate_regression
from .config import (ConfigError, ExperimentConfig, domain_from_spec, intensity_from_spec,
                     load_defaults, subsequence, subsequence_summable)
