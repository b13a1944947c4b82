"""Sleep-control policies for clusters of cells sharing a fallback server.

Library layout:

- `model`: domain types (power model, cost functions, arrival mixtures,
  cluster configuration, states, actions)
- `arrivals`: residual-user distribution and the event-driven oracle
- `costs`: anticipated power, segment costs, threshold helper functions
- `joint`: exact joint-MDP solver (pattern policy iteration + dense reference)
- `greedy`: myopic policy, dual thresholds, closed-form long-run cost
- `index_policy`: decoupled MDP, per-state indexes, indexability diagnostics
- `baselines`: uniform / round-robin policies and the cost lower bound
- `sim`: Monte-Carlo policy evaluation with common random numbers
- `config`, `experiments`, `figures`, `cli`: configuration files, sweep
  orchestration with CSV/PNG artifacts, and the command-line entry point
"""

from .model import (
    ActionVector,
    ArrivalMixture,
    CellParams,
    CellState,
    ClusterConfig,
    ClusterState,
    CostFunction,
    PowerParams,
    eval_cost,
    mean_arrival_rate,
)
from .arrivals import ResidualPmf, default_n_th, residual_oracle, residual_pmf, tilde_lambda
from .costs import AnticipatedCosts, anticipated_costs, anticipated_power, immediate_cost
from .joint import CapacityError, ConvergenceError, SolvedMdp, enumerate_actions, rvia_solve
from .greedy import GreedyThresholds, greedy_action, greedy_longrun_cost, greedy_thresholds
from .index_policy import (
    DecoupledSolution,
    IndexTable,
    build_index_table,
    compute_index,
    decoupled_rvia,
    index_action,
    indexability_scan,
)
from .baselines import (
    baseline_difference,
    lower_bound,
    round_robin_action,
    round_robin_longrun_cost,
    uniform_action,
    uniform_longrun_cost,
)
from .sim import SimResult, delta_metric, paired_run, run_policy
from .config import ExperimentSpec, load_config

__version__ = "0.1.0"
