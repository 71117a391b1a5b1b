"""Compound bid/cost actions and the additive price updates they drive."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .domain import Campaign, Publisher
from .quantizer import QuantizerConfig, StateIndex

logger = logging.getLogger(__name__)

# default grids: 8 margin multipliers, 14 efficiency multipliers, both containing 0
DEFAULT_F_M = (-1.0, -0.66, -0.33, -0.15, 0.0, 0.33, 0.66, 1.0)
DEFAULT_F_ETA = tuple(sorted({round(-1.0 + k / 6.0, 12) for k in range(13)} | {-1.0 / 12.0}))


class PriceQuote(NamedTuple):
    bid: float
    cost: float


class ActionIndex(NamedTuple):
    m_idx: int
    eta_idx: int


@dataclass(frozen=True)
class ActionSpace:
    f_m_values: Sequence[float] = field(default=DEFAULT_F_M)
    f_eta_values: Sequence[float] = field(default=DEFAULT_F_ETA)
    kappa_bid: float = 0.2
    kappa_beta: float = 0.5
    kappa_eta: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "f_m_values", tuple(float(v) for v in self.f_m_values))
        object.__setattr__(self, "f_eta_values", tuple(float(v) for v in self.f_eta_values))
        for name in ("f_m_values", "f_eta_values"):
            vals = getattr(self, name)
            if not vals:
                raise ValueError(f"{name} must be non-empty")
            if list(vals) != sorted(vals) or len(set(vals)) != len(vals):
                raise ValueError(f"{name} must be strictly ascending")
            if 0.0 not in vals:
                raise ValueError(f"{name} must contain 0 so the no-op is expressible")

    @property
    def a_m(self) -> int:
        return len(self.f_m_values)

    @property
    def a_eta(self) -> int:
        return len(self.f_eta_values)

    @property
    def n_actions(self) -> int:
        return self.a_m * self.a_eta

    def encode(self, action: ActionIndex) -> int:
        m, e = action
        if not (0 <= m < self.a_m and 0 <= e < self.a_eta):
            raise IndexError(f"action {action} out of range")
        return m * self.a_eta + e

    def decode(self, index: int) -> ActionIndex:
        if not 0 <= index < self.n_actions:
            raise IndexError(f"action index {index} out of range")
        return ActionIndex(*divmod(index, self.a_eta))

    @property
    def noop(self) -> ActionIndex:
        return ActionIndex(self.f_m_values.index(0.0), self.f_eta_values.index(0.0))

    def to_dict(self) -> dict:
        return {
            "f_m_values": list(self.f_m_values),
            "f_eta_values": list(self.f_eta_values),
            "kappa_bid": self.kappa_bid,
            "kappa_beta": self.kappa_beta,
            "kappa_eta": self.kappa_eta,
        }


def base_quote(campaign: Campaign, publisher: Publisher) -> PriceQuote:
    """eCPM bid (target CPI x pCVR x pCTR) and the matching per-click cost."""
    try:
        pctr = publisher.pctr[campaign.id]
    except KeyError:
        raise KeyError(f"no pctr for ({publisher.id}, {campaign.id})") from None
    cost = campaign.target_cpi * campaign.pcvr
    return PriceQuote(bid=cost * pctr, cost=cost)


def bid_multiplier(action: ActionIndex, space: ActionSpace) -> float:
    return 1.0 + space.kappa_bid * space.f_m_values[action.m_idx]


def cost_multiplier(action: ActionIndex, space: ActionSpace, beta_hat: float) -> float:
    return 1.0 + (1.0 + space.kappa_beta * beta_hat) * space.kappa_eta * space.f_eta_values[action.eta_idx]


def apply_action(quote: PriceQuote, action: ActionIndex, space: ActionSpace, beta_hat: float) -> PriceQuote:
    if not 0.0 <= beta_hat <= 1.0:
        raise ValueError(f"beta_hat must be in [0, 1], got {beta_hat}")
    bid = quote.bid * bid_multiplier(action, space)
    cost = quote.cost * cost_multiplier(action, space, beta_hat)
    if math.isnan(bid) or math.isnan(cost) or bid < 0 or cost < 0:
        logger.warning("degenerate action parameterisation: %s -> bid=%r cost=%r", action, bid, cost)
        bid = 0.0 if math.isnan(bid) else max(bid, 0.0)
        cost = 0.0 if math.isnan(cost) else max(cost, 0.0)
    return PriceQuote(bid, cost)


def intuitive_action(state: StateIndex, space: ActionSpace, cfg: QuantizerConfig) -> ActionIndex:
    """Hand-written rule: bid follows margin, cost follows efficiency.

    Negative margin lowers the bid, positive margin raises it, the neutral
    bin leaves it alone. Bad efficiency always lowers the cost; good
    efficiency raises it unless the margin is already positive.
    """
    lo_m, hi_m = 0, space.a_m - 1
    lo_e, hi_e = 0, space.a_eta - 1
    zero_m, zero_e = space.noop
    good = state.eta_bin < cfg.l_eta
    if state.margin_bin < cfg.l_m:
        m_idx = lo_m
    elif state.margin_bin > cfg.l_m:
        m_idx = hi_m
    else:
        m_idx = zero_m
    if not good:
        e_idx = lo_e
    elif state.margin_bin > cfg.l_m:
        e_idx = zero_e
    else:
        e_idx = hi_e
    return ActionIndex(m_idx, e_idx)
