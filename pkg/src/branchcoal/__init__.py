"""Coalescent point processes of branching trees, discrete and continuous."""

from .errors import (BranchcoalError, HorizonError, InconsistentTrajectoryError, MalformedDrawError,
                     NumericalError, ParameterError, RejectionBudgetExceeded)
from .measure import INF, PointMassMeasure, support_min
from .offspring import (IteratedPgfTable, OffspringDistribution, ZetaPrimeSampler, binary,
                        branch_length_tail, geometric, iterate_pgf, lf_branch_tail, linear_fractional,
                        make_offspring, pgf, pgf_derivative, poisson, sample_offspring,
                        sample_zeta_prime, table, zeta_prime_law)
from .trees import (LukasiewiczWalk, PlanarTree, SpineDecomposition, forest_coalescent,
                    great_aunt_functional, heights, sample_conditioned_walk, sample_spine_tree,
                    sample_walk, spine_decomposition, spine_pair_pmf, standing_ancestry)
from .discrete import (BChainState, CoalescentTrajectory, DSequence, b_chain, b_chain_step,
                       b_from_d, b_step, coalescence_time, d_chain, d_step,
                       residual_multiplicities, sample_A_zeta)
from .csb import (BranchingMechanism, CsbDraw, DensityLevy, GreatAuntMeasure, StableLevy,
                  a_n_joint, a_tail, atom_at_infinity, b_eps_step, parse_mechanism,
                  rescaling_experiment, sample_a_n, sample_rho0, tail_via_rho0)
from .applications import (ClusterSample, YaglomTable, disintegration_check, lf_iid_check,
                           sample_UV, v_law, yaglom_distribution)

__version__ = "0.1.0"
