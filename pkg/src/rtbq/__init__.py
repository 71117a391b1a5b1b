"""Real-time-bidding simulator and tabular Q-learning bid/cost policy engine."""

from .action import ActionIndex, ActionSpace, PriceQuote, apply_action, base_quote, intuitive_action
from .baseline import PIController, PiConfig, pi_update
from .domain import Campaign, LedgerState, Publisher, efficiency, is_happy, margin
from .harness import (GeneratorSpec, RunReport, Scenario, TrainConfig, evaluate, evaluate_weeks, generate_scenario,
                      sweep_lambda, sweep_seeds, train)
from .qlearning import ExplorationSchedule, QTable, boltzmann_sample, extract_policy, q_update
from .quantizer import QuantizerConfig, StateIndex, state_of
from .reward import RewardConfig, RewardSnapshot, attribution_weights, reward
from .simulator import DelayModel, SimConfig, Simulator, WinModel, win_probability

__version__ = "0.1.0"
