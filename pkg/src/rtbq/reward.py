"""Attribution-weighted reward for one (publisher, campaign) compound action."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class RewardConfig:
    lam: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")


@dataclass(frozen=True)
class RewardSnapshot:
    m_prev: float
    m_now: float
    eta_prev: float
    eta_now: float
    budget_i_remaining: float
    total_budget_remaining: float
    spend_j: float
    total_spend: float

    def __post_init__(self):
        if not self.total_budget_remaining >= self.budget_i_remaining >= 0:
            raise ValueError("need total_budget_remaining >= budget_i_remaining >= 0")
        if not self.total_spend >= self.spend_j >= 0:
            raise ValueError("need total_spend >= spend_j >= 0")


def attribution_weights(snap: RewardSnapshot) -> tuple[float, float]:
    """Budget share of the campaign and spend share of the publisher.

    Either weight is 0 when its denominator is 0.
    """
    if snap.total_budget_remaining > 0:
        kappa_rm = snap.budget_i_remaining / snap.total_budget_remaining
    else:
        kappa_rm = 0.0
    if snap.total_spend > 0:
        kappa_reta = snap.spend_j / snap.total_spend
    else:
        kappa_reta = 0.0
    return kappa_rm, kappa_reta


def reward(snap: RewardSnapshot, cfg: RewardConfig) -> float:
    # margin increases and efficiency decreases are both rewarded
    kappa_rm, kappa_reta = attribution_weights(snap)
    lam = cfg.lam
    return ((1.0 - lam) * kappa_rm * (snap.m_now - snap.m_prev)
            + lam * kappa_reta * (snap.eta_prev - snap.eta_now))
