"""Supervised PCTL policy synthesis for a noisy Dubins vehicle.

The pipeline: a unicycle with gyroscope-quantized angular-velocity noise
is abstracted into a finite tree-structured MDP whose states carry
uncertainty-disc labels; a nested-until PCTL chain is solved by blockwise
backward induction; monotone specification updates re-solve incrementally;
and a negotiation service wraps the loop for a human supervisor.
"""

from .environment import (ConvexPolygon, Environment, ExtProp, LabelSeq,
                          label_disc, load_environment, trace_labels,
                          word_of_trace)
from .mdp import NU, MdpOverflow, MdpState, TreeMdp, build_mdp, validate
from .pctl import (ADD_PHI_CLAUSE, ADD_PSI_CLAUSE, DECREASE, INCREASE,
                   LOWER_THRESHOLD, RAISE_THRESHOLD, REMOVE_PHI_CLAUSE,
                   REMOVE_PSI_CLAUSE, Block, Clause, Formula, FormulaError,
                   ParseError, UpdateRule, apply_update, conj, direction,
                   disj, parse)
from .service import (Candidate, Deployment, DomainError, PhaseError,
                      Scenario, ScenarioError, Session, SessionNotFound,
                      SessionStore, StaleCandidateError, accept,
                      bundled_scenario, create_session, deploy,
                      enumerate_relaxations, environment_event,
                      remaining_bounds, step_deployment)
from .strategy import (EstimateResult, SimTrace, Strategy, check_word,
                       estimate, simulate, trial_rng, wilson_interval)
from .synthesis import (BlockSolution, HistoryPolicy, IncrementalResult,
                        Solution, backward_values, bounds, partition,
                        prune_from, satisfied_up_to, solve,
                        solve_incremental, threshold)
from .vehicle import (ArcSegment, ControlSet, NoiseModel, Pose, ReachNode,
                      ReachTree, ReachTreeOverflow, build_reach_tree,
                      integrate_arc, make_noise_model, propagate_uncertainty,
                      wrap_angle)

__version__ = "0.1.0"
