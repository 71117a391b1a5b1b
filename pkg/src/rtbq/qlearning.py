"""Tabular Q-learning with Boltzmann exploration."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

QTABLE_FORMAT = "rtbq-qtable"
QTABLE_VERSION = 1


class QTable:
    """Action values Q(s, a) with per-cell visit counts.

    ``alpha_decay`` selects the learning-rate schedule: 0 keeps alpha constant,
    c > 0 uses alpha / (1 + c * visits(s, a)).
    """

    def __init__(self, n_states: int, n_actions: int, alpha: float = 0.1, gamma: float = 0.9,
                 alpha_decay: float = 0.0):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if alpha_decay < 0:
            raise ValueError("alpha_decay must be >= 0")
        self.values = np.zeros((n_states, n_actions), dtype=np.float64)
        self.visits = np.zeros((n_states, n_actions), dtype=np.int64)
        self.alpha = float(alpha)
        self.gamma = float(gamma)
        self.alpha_decay = float(alpha_decay)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def copy(self) -> "QTable":
        other = QTable(*self.shape, alpha=self.alpha, gamma=self.gamma, alpha_decay=self.alpha_decay)
        other.values[:] = self.values
        other.visits[:] = self.visits
        return other

    def learning_rate(self, s: int, a: int) -> float:
        return adaptive_alpha(int(self.visits[s, a]), self.alpha, self.alpha_decay)

    def save(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([QTABLE_FORMAT, QTABLE_VERSION])
            w.writerow(["n_states", "n_actions", "alpha", "gamma", "alpha_decay"])
            w.writerow([self.shape[0], self.shape[1], repr(self.alpha), repr(self.gamma), repr(self.alpha_decay)])
            w.writerow(["state", "action", "value", "visits"])
            for s in range(self.shape[0]):
                for a in range(self.shape[1]):
                    w.writerow([s, a, repr(float(self.values[s, a])), int(self.visits[s, a])])

    @classmethod
    def load(cls, path) -> "QTable":
        with Path(path).open(newline="") as fh:
            rows = csv.reader(fh)
            fmt = next(rows)
            if fmt[0] != QTABLE_FORMAT or int(fmt[1]) != QTABLE_VERSION:
                raise ValueError(f"unsupported q-table file header {fmt}")
            next(rows)
            ns, na, alpha, gamma, decay = next(rows)
            table = cls(int(ns), int(na), float(alpha), float(gamma), float(decay))
            next(rows)
            for s, a, v, n in rows:
                table.values[int(s), int(a)] = float(v)
                table.visits[int(s), int(a)] = int(n)
        return table


@dataclass(frozen=True)
class ExplorationSchedule:
    theta_initial: float = 1.0
    decay: float = 0.999
    theta_min: float = 0.01

    def __post_init__(self):
        if not self.theta_initial > 0 or not self.theta_min > 0:
            raise ValueError("temperatures must be > 0")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")

    def theta(self, epoch: int) -> float:
        return max(self.theta_min, self.theta_initial * self.decay ** epoch)


def adaptive_alpha(visit_count: int, alpha: float, c: float = 0.0) -> float:
    return alpha / (1.0 + c * visit_count)


def q_update(table: QTable, s: int, a: int, r: float, s_next: int) -> QTable:
    """One in-place step of Q(s,a) <- (1-alpha) Q(s,a) + alpha (r + gamma max_a' Q(s',a'))."""
    n_states, n_actions = table.shape
    if not (0 <= s < n_states and 0 <= s_next < n_states and 0 <= a < n_actions):
        raise IndexError(f"(s={s}, a={a}, s'={s_next}) outside table of shape {table.shape}")
    if not math.isfinite(r):
        raise ValueError("reward must be finite")
    alpha = table.learning_rate(s, a)
    target = r + table.gamma * float(table.values[s_next].max())
    table.values[s, a] = (1.0 - alpha) * table.values[s, a] + alpha * target
    table.visits[s, a] += 1
    return table


def boltzmann_probabilities(q_row, theta: float) -> np.ndarray:
    if not theta > 0:
        raise ValueError("theta must be > 0")
    z = np.asarray(q_row, dtype=np.float64) / theta
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


def boltzmann_sample(table: QTable, s: int, theta: float, rng: np.random.Generator) -> int:
    p = boltzmann_probabilities(table.values[s], theta)
    # inverse-CDF on one uniform keeps the draw count per call fixed
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(idx, p.size - 1)


def extract_policy(table: QTable) -> np.ndarray:
    """Greedy action per state; argmax picks the lowest index on ties."""
    return np.argmax(table.values, axis=1)
