"""Distributed equilibrium seeking in aggregative games over networks.

Agents repeatedly project a damped pseudo-gradient step while a
consensus protocol tracks the population aggregate they cannot observe
directly.  The package bundles the iteration itself, game and graph
generators, exact projection machinery, a radial-feeder voltage-support
case study, and a config-driven command line front end.
"""

from .algorithm import (BoundaryLayerResult, ConsensusBasis, ConvergenceReport,
                        DiminishingSchedule, IterationTrace, TRACE_COLUMNS,
                        TRACKER_MODES, TradesConfig, TradesState,
                        baseline_diminishing, boundary_layer_budget,
                        boundary_layer_probe, consensus_basis,
                        decompose_tracker, exact_tracker_values,
                        fit_convergence, init, reduced_system_run, run, step)
from .config import (ExperimentConfig, canonical_text, load_config,
                     load_quadratic_game, parse_config, save_quadratic_game)
from .errors import (ConfigError, EmptyIntersectionSuspected, InfeasibleSpec,
                     MaxIterExceeded, MaxSweepsExceeded, NonFiniteDetected,
                     SinkhornStalled, TradesError)
from .games import (AffineGameSpec, AssumptionReport, CostOracle, GameAgent,
                    GameDefinition, StrategyProfile, aggregate,
                    fixed_point_residual, linear_aggregation, local_operator,
                    phi_stack, pseudo_gradient, quadratic_aggregative_game,
                    random_strongly_monotone_game, solve_ne_oracle,
                    validate_assumptions)
from .grid import (DistFlowModel, EvAgentSpec, RadialNetwork,
                   VoltageGameConfig, VoltageSummary, build_radial_network,
                   build_voltage_game, default_voltage_config,
                   distflow_sensitivities, evaluate_voltages, gen_agents,
                   gen_baseline_profile, gen_prices, load_agents,
                   load_network, load_prices, save_agents, save_network,
                   save_prices)
from .network import (ConsensusSpectrum, WeightedDigraph, consensus_step,
                      gen_digraph, is_strongly_connected, load_graph,
                      make_doubly_stochastic, save_graph, spectrum)
from .projections import (Box, ConvexSet, DiskPairs, FeasibleSetProjector,
                          Halfspace, Hyperplane, Intersection, box_projector,
                          build_ev_projector, identity_projector,
                          project_dykstra, project_primitive)

__version__ = "0.1.0"
