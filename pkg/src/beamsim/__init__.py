"""mmWave vehicular beam-association simulator with parallel tabular Q-learning."""

from .scenario import (BeamId, BeamProfile, ConfigError, RadioParams, RateTable,
                       Scenario, ScenarioConfig, VIRTUAL_BEAM, beams_covering,
                       build_scenario, pathloss_db, sample_connection)
from .dynamics import (EpochEvent, EventKind, SystemState, TransitionSample,
                       VehicleState, World, available_actions, execute_action)
from .learning import (ConvergenceLog, LearningSchedule, QTable, extract_policy,
                       greedy_action, load_snapshot, q_update, run_training,
                       save_snapshot, select_action)
from .baselines import (ObservationPrivilege, PrivilegeError, blockage_aware_action,
                        max_rate_action, upper_bound_action)
from .oracle import (EnumeratedChain, MdpModel, average_reward, cesaro_limit,
                     communicating_classes, enumerate_chain, enumerate_mdp,
                     irreducible, q_star, toy_mdp)
from .evaluate import evaluate_policy, make_policy, simulate_long_run
from .config import ExperimentConfig, load_config, parse_config
from .harness import MetricsRecord, run_sweep, run_trial, write_outputs

__version__ = "0.1.0"
