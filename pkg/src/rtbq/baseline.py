"""Margin-only PI controller used as the comparison baseline."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .domain import UndefinedMargin


@dataclass(frozen=True)
class PiConfig:
    kp: float = 1.0
    ki: float = 0.1
    margin_target: float = 0.05
    integral_clamp: float = 2.0
    min_multiplier: float = 0.5
    max_multiplier: float = 2.0
    update_epoch: int = 60

    def __post_init__(self):
        if self.integral_clamp < 0:
            raise ValueError("integral_clamp must be >= 0")
        if not 0 < self.min_multiplier <= 1.0 <= self.max_multiplier:
            raise ValueError("multiplier bounds must bracket 1")
        if self.update_epoch <= 0 or self.update_epoch % 60:
            raise ValueError("update_epoch must be a positive multiple of 60 minutes")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PiState:
    integral: float = 0.0
    multiplier: float = 1.0


def pi_update(state: PiState, m_observed: float, cfg: PiConfig) -> float:
    """Advance the controller by one observation and return the bid multiplier.

    The error is observed minus target: the bid is the actuator and margin
    falls as the bid rises, so a margin above target pushes the bid up.
    """
    e = m_observed - cfg.margin_target
    state.integral = float(np.clip(state.integral + e, -cfg.integral_clamp, cfg.integral_clamp))
    raw = 1.0 + cfg.kp * e + cfg.ki * state.integral
    state.multiplier = float(np.clip(raw, cfg.min_multiplier, cfg.max_multiplier))
    return state.multiplier


class PIController:
    """One PI loop per publisher scaling every campaign's base bid there.

    Advertiser costs stay at their base values.
    """

    def __init__(self, cfg: PiConfig = PiConfig()):
        self.cfg = cfg
        self.states: list[PiState] = []

    def on_epoch(self, sim) -> None:
        if not self.states:
            self.states = [PiState() for _ in sim.publishers]
        if sim.clock % self.cfg.update_epoch:
            return
        try:
            margins = sim.ledger.margins()
        except UndefinedMargin:
            return
        for j, state in enumerate(self.states):
            mult = pi_update(state, float(margins[j]), self.cfg)
            sim.bid[j, :] = sim.base_bid[j, :] * mult
        sim.refresh_prices()
