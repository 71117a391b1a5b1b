"""Simulator controllers that price (publisher, campaign) pairs from the quantised state."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .action import ActionSpace, apply_action, intuitive_action, PriceQuote
from .domain import UndefinedMargin
from .qlearning import ExplorationSchedule, QTable, boltzmann_sample, extract_policy, q_update
from .quantizer import QuantizerConfig, StateIndex, budget_representative, state_of
from .reward import RewardConfig, RewardSnapshot, reward


def intuitive_policy(cfg: QuantizerConfig, space: ActionSpace) -> np.ndarray:
    return np.array([space.encode(intuitive_action(StateIndex.from_flat(s, cfg), space, cfg))
                     for s in range(cfg.n_states)], dtype=np.int64)


def noop_policy(cfg: QuantizerConfig, space: ActionSpace) -> np.ndarray:
    return np.full(cfg.n_states, space.encode(space.noop), dtype=np.int64)


class PolicyController:
    """Frozen deterministic policy: a state -> action lookup array.

    Only pairs that won at least one auction in the last epoch are repriced;
    every other pair keeps its current quote.
    """

    def __init__(self, cfg: QuantizerConfig, space: ActionSpace, policy: np.ndarray):
        policy = np.asarray(policy, dtype=np.int64)
        if policy.shape != (cfg.n_states,):
            raise ValueError(f"policy has shape {policy.shape}, expected ({cfg.n_states},)")
        if policy.min() < 0 or policy.max() >= space.n_actions:
            raise ValueError("policy refers to actions outside the action space")
        self.cfg = cfg
        self.space = space
        self.policy = policy

    def choose(self, s: int) -> int:
        return int(self.policy[s])

    def state(self, sim, j: int, i: int) -> StateIndex:
        return state_of(sim.ledger, i, j, float(sim.target_cpi[i]), self.cfg)

    def on_epoch(self, sim) -> None:
        pairs = np.argwhere(sim.hour_wins > 0)
        for j, i in pairs:
            s = self.state(sim, j, i)
            a = self.choose(s.flat(self.cfg))
            self.after_choice(sim, j, i, s, a)
            base = PriceQuote(float(sim.base_bid[j, i]), float(sim.base_cost[i]))
            beta_hat = budget_representative(s.budget_bin, self.cfg)
            q = apply_action(base, self.space.decode(a), self.space, beta_hat)
            sim.set_quote(j, i, q.bid, q.cost)
        if len(pairs):
            sim.refresh_prices()

    def after_choice(self, sim, j, i, s, a) -> None:
        pass


class QLearningController(PolicyController):
    """Boltzmann-exploring learner that updates ``table`` once per epoch.

    The transition for a pair's action closes at the next epoch, with reward
    computed from the margin and efficiency change over that epoch.
    """

    def __init__(self, cfg: QuantizerConfig, space: ActionSpace, table: QTable,
                 reward_cfg: RewardConfig, schedule: ExplorationSchedule,
                 rng: np.random.Generator, epoch: int = 0, clip_eta: bool = True):
        if table.shape != (cfg.n_states, space.n_actions):
            raise ValueError(f"q-table shape {table.shape} does not match state/action spaces")
        super().__init__(cfg, space, extract_policy(table))
        self.table = table
        self.reward_cfg = reward_cfg
        self.schedule = schedule
        self.rng = rng
        self.epoch = epoch
        self.clip_eta = clip_eta
        self.pending: dict = {}
        self.rewards: list = []

    def choose(self, s: int) -> int:
        return boltzmann_sample(self.table, s, self.schedule.theta(self.epoch), self.rng)

    def _margin(self, sim, j: int) -> float:
        try:
            return sim.ledger.margin_at(j)
        except UndefinedMargin:
            return 0.0

    def _eta(self, sim, i: int) -> float:
        eta = sim.ledger.efficiency_at(i, float(sim.target_cpi[i]))
        if eta is None:
            return self.cfg.eta_upper
        return min(eta, self.cfg.eta_upper) if self.clip_eta else eta

    def after_choice(self, sim, j, i, s, a) -> None:
        self.pending[(int(j), int(i))] = (s.flat(self.cfg), a, self._margin(sim, j), self._eta(sim, i))

    def close_transitions(self, sim) -> None:
        led = sim.ledger
        remaining = led.remaining()
        total_remaining = float(remaining.sum())
        total_spend = float(led.total_spend())
        for (j, i), (s, a, m_prev, eta_prev) in self.pending.items():
            snap = RewardSnapshot(
                m_prev=m_prev, m_now=self._margin(sim, j), eta_prev=eta_prev, eta_now=self._eta(sim, i),
                budget_i_remaining=float(remaining[i]), total_budget_remaining=total_remaining,
                spend_j=float(led.pub_spend[j]), total_spend=total_spend)
            r = reward(snap, self.reward_cfg)
            s_next = self.state(sim, j, i).flat(self.cfg)
            q_update(self.table, s, a, r, s_next)
            self.rewards.append(r)
        self.pending = {}

    def on_epoch(self, sim) -> None:
        self.close_transitions(sim)
        super().on_epoch(sim)
        self.epoch += 1

    def finish(self, sim) -> None:
        self.close_transitions(sim)

    def greedy_policy(self) -> np.ndarray:
        return extract_policy(self.table)


def make_controller(cfg: QuantizerConfig, space: ActionSpace, policy: Optional[np.ndarray] = None,
                    kind: str = "table") -> PolicyController:
    if kind == "intuitive":
        return PolicyController(cfg, space, intuitive_policy(cfg, space))
    if kind == "noop":
        return PolicyController(cfg, space, noop_policy(cfg, space))
    if policy is None:
        raise ValueError("a policy array is required for kind='table'")
    return PolicyController(cfg, space, policy)
