"""Two-provider pricing and fleet-rebalancing games on time-expanded networks."""
from .admm import SolverSettings, solve_qp
from .equilibrium import (GneSolution, MonopolySolution, StrategyProfile, check_symmetry,
                          monopoly_duopoly_equivalence, solve_gne, solve_monopoly,
                          solve_partitioned_monopoly, solve_stochastic_gne, verify_gne)
from .network import (ProblemInstance, build_separable_instance, build_single_pair_instance,
                      build_two_cluster_instance, load_instance, validate_instance)
from .programs import ScenarioSet
from .qp import QuadraticProgram

__all__ = ["SolverSettings", "solve_qp", "GneSolution", "MonopolySolution", "StrategyProfile",
           "check_symmetry", "monopoly_duopoly_equivalence", "solve_gne", "solve_monopoly",
           "solve_partitioned_monopoly", "solve_stochastic_gne", "verify_gne", "ProblemInstance",
           "build_separable_instance", "build_single_pair_instance", "build_two_cluster_instance",
           "load_instance", "validate_instance", "ScenarioSet", "QuadraticProgram"]
