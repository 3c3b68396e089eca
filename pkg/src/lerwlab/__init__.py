"""Loop-erased random walks on weighted lattices: samplers, exact solvers,
estimators and an experiment runner."""
from .rng import RngStream, as_stream
from .graph import GraphError, GridGraph, HalfSpaceSpec, WeightedGraph, nearest_vertex, total_weight
from .lattices import (ConfigError, StitchConfig, centered_grid, certify_lattice, grid, moment_certificate,
                       rotated_lattice, stitched)
from .walks import (PathSeq, StopSpec, WalkError, conditioned_walk, cut_points, loop_erase, loop_erase_pieces,
                    run_until, sample_conditioned, sample_paths, wilson_ust)
from .oracle import (BudgetExceeded, OracleError, exact_lerw_law, greens_function, harmonic_solve,
                     hit_probability, hitting_distribution, laplacian_walk_step, martin_capacity, stack_chain_law)
from .sphere import SpherePartition, assign_cells, sphere_partition, stopping_sphere
from .estimators import (CapExhausted, EstimatorError, ExponentEstimate, beurling_hit, cut_point_density,
                         escape_probability, exit_time_tail, growth_exponent, interpolation_consistency,
                         isotropy_check, loglog_fit, nonintersection_scaling, quasi_loop_count, quasi_loop_decay)
from .coupling import CouplingConfig, CouplingError, InvariantError, couple_skeleton, coupling_tail

__version__ = "0.1.0"
