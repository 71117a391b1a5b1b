"""Discretisation of (margin, efficiency, leftover budget) into the Q-table state space.

All bins are half-open ``(lo, hi]`` except the lowest efficiency and budget
bins, which are closed at 0. Margin values beyond the outer edges clamp into
the outermost bins, efficiencies above ``eta_upper`` clamp into the worst bin.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import asdict, dataclass
from functools import cached_property
from typing import NamedTuple, Optional

from .domain import LedgerState, UndefinedMargin


@dataclass(frozen=True)
class QuantizerConfig:
    delta_m: float = 0.05
    l_m: int = 1
    epsilon: float = 0.2
    eta_upper: float = 5.0
    l_eta: int = 2
    l_b: int = 2

    def __post_init__(self):
        if not self.delta_m > 0:
            raise ValueError("delta_m must be > 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.eta_upper > 1.0 + self.epsilon:
            raise ValueError("eta_upper must exceed 1 + epsilon")
        for name in ("l_m", "l_eta", "l_b"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")

    @property
    def n_margin_bins(self) -> int:
        return 2 * self.l_m + 1

    @property
    def n_eta_bins(self) -> int:
        return 2 * self.l_eta

    @property
    def n_budget_bins(self) -> int:
        return 2 * self.l_b

    @property
    def n_states(self) -> int:
        return self.n_margin_bins * self.n_eta_bins * self.n_budget_bins

    @property
    def neutral_margin_bin(self) -> int:
        return self.l_m

    @cached_property
    def margin_edges(self) -> tuple:
        # interior edges at odd multiples of delta_m
        return tuple((2 * k + 1) * self.delta_m for k in range(-self.l_m, self.l_m))

    @cached_property
    def eta_edges(self) -> tuple:
        good = 1.0 + self.epsilon
        lo_side = [good * k / self.l_eta for k in range(1, self.l_eta)] + [good]
        span = self.eta_upper - good
        hi_side = [good + span * k / self.l_eta for k in range(1, self.l_eta)]
        return tuple(lo_side + hi_side)

    @cached_property
    def budget_edges(self) -> tuple:
        n = self.n_budget_bins
        return tuple(k / n for k in range(1, n))

    def to_dict(self) -> dict:
        return asdict(self)


class StateIndex(NamedTuple):
    margin_bin: int
    eta_bin: int
    budget_bin: int

    def flat(self, cfg: QuantizerConfig) -> int:
        return (self.margin_bin * cfg.n_eta_bins + self.eta_bin) * cfg.n_budget_bins + self.budget_bin

    @classmethod
    def from_flat(cls, index: int, cfg: QuantizerConfig) -> "StateIndex":
        if not 0 <= index < cfg.n_states:
            raise IndexError(f"state index {index} out of range")
        rest, b = divmod(index, cfg.n_budget_bins)
        m, e = divmod(rest, cfg.n_eta_bins)
        return cls(m, e, b)


def quantize_margin(m: float, cfg: QuantizerConfig) -> int:
    if math.isnan(m):
        raise ValueError("margin is NaN")
    return bisect.bisect_left(cfg.margin_edges, m)


def quantize_efficiency(eta: Optional[float], cfg: QuantizerConfig, cost: float = 0.0) -> int:
    """Efficiency bin. ``eta=None`` (no installs) maps to the on-target bin when
    nothing was charged and to the worst bin otherwise."""
    if eta is None:
        eta = 1.0 if cost <= 0 else cfg.eta_upper
    if math.isnan(eta):
        raise ValueError("efficiency is NaN")
    if eta < 0:
        raise ValueError(f"efficiency must be non-negative, got {eta}")
    return bisect.bisect_left(cfg.eta_edges, eta)


def quantize_budget(beta: float, cfg: QuantizerConfig) -> int:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"leftover budget fraction must be in [0, 1], got {beta}")
    return bisect.bisect_left(cfg.budget_edges, beta)


def margin_representative(k: int, cfg: QuantizerConfig) -> float:
    return 2.0 * (k - cfg.l_m) * cfg.delta_m


def eta_representative(k: int, cfg: QuantizerConfig) -> float:
    edges = (0.0,) + cfg.eta_edges + (cfg.eta_upper,)
    return 0.5 * (edges[k] + edges[k + 1])


def budget_representative(k: int, cfg: QuantizerConfig) -> float:
    return (k + 0.5) / cfg.n_budget_bins


def state_of(ledger: LedgerState, campaign_index: int, publisher_index: int,
             target_cpi: float, cfg: QuantizerConfig) -> StateIndex:
    """Quantised state of one (publisher, campaign) pair from the ledger."""
    try:
        mb = quantize_margin(ledger.margin_at(publisher_index), cfg)
    except UndefinedMargin:
        mb = cfg.neutral_margin_bin
    eta = ledger.efficiency_at(campaign_index, target_cpi)
    eb = quantize_efficiency(eta, cfg, cost=float(ledger.camp_cost[campaign_index]))
    bb = quantize_budget(ledger.budget_fraction(campaign_index), cfg)
    return StateIndex(mb, eb, bb)
