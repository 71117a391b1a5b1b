"""Core entities and the margin / efficiency arithmetic shared by every module.

Money is stored as integer micro-currency units so ledgers replay bit-exactly;
formulas are evaluated in floating point only when read.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

MICROS = 1_000_000


def to_micros(amount: float) -> int:
    return int(round(amount * MICROS))


def from_micros(amount) -> float:
    return float(amount) / MICROS


class UndefinedMargin(ValueError):
    """Raised when margin is requested before any spend has happened."""


@dataclass(frozen=True)
class Campaign:
    """An app-install campaign.

    ``pcvr`` is the bidder's predicted install rate and prices every quote;
    ``true_pcvr`` drives simulated installs and defaults to the prediction.
    """

    id: str
    target_cpi: float
    budget: float
    pcvr: float
    baseline_installs: int = 10
    true_pcvr: Optional[float] = None

    def __post_init__(self):
        if self.true_pcvr is None:
            object.__setattr__(self, "true_pcvr", self.pcvr)
        if not 0.0 <= self.true_pcvr <= 1.0:
            raise ValueError(f"campaign {self.id}: true_pcvr must be in [0, 1]")
        if not self.target_cpi > 0:
            raise ValueError(f"campaign {self.id}: target_cpi must be > 0")
        if not self.budget > 0:
            raise ValueError(f"campaign {self.id}: budget must be > 0")
        if not 0.0 <= self.pcvr <= 1.0:
            raise ValueError(f"campaign {self.id}: pcvr must be in [0, 1]")
        if self.baseline_installs < 0:
            raise ValueError(f"campaign {self.id}: baseline_installs must be >= 0")


@dataclass(frozen=True)
class Publisher:
    id: str
    floor_price: float
    landscape_a: float
    request_rate: float
    pctr: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.floor_price < 0:
            raise ValueError(f"publisher {self.id}: floor_price must be >= 0")
        if not self.landscape_a > 0:
            raise ValueError(f"publisher {self.id}: landscape_a must be > 0")
        if self.request_rate < 0:
            raise ValueError(f"publisher {self.id}: request_rate must be >= 0")
        for cid, p in self.pctr.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"publisher {self.id}: pctr[{cid}] must be in [0, 1]")


@dataclass(frozen=True, order=True)
class PendingInstall:
    notify_time: int
    click_time: int
    campaign_id: str = field(compare=False)
    publisher_id: str = field(compare=False)

    def __post_init__(self):
        if self.notify_time < self.click_time:
            raise ValueError("notify_time must be >= click_time")


@dataclass(frozen=True)
class AuctionRecord:
    """Aggregate outcome of one publisher's auctions during one minute."""

    minute: int
    publisher_id: str
    campaign_id: str
    bid: int
    opportunities: int
    wins: int
    spend: int
    clicks: int
    cost: int
    installs: int
    kind: str = "auction"


@dataclass(frozen=True)
class InstallRecord:
    minute: int
    click_time: int
    publisher_id: str
    campaign_id: str
    kind: str = "install"


class LedgerState:
    """Running aggregates for one simulation run.

    Per-publisher spend (paid to the exchange) and advertiser cost, per-campaign
    cost, clicks, impressions and observed installs. All money in micros.
    """

    def __init__(self, publisher_ids: Sequence[str], campaign_ids: Sequence[str],
                 budgets: Sequence[int], horizon: int):
        self.publisher_ids = list(publisher_ids)
        self.campaign_ids = list(campaign_ids)
        self.pub_index = {p: j for j, p in enumerate(self.publisher_ids)}
        self.camp_index = {c: i for i, c in enumerate(self.campaign_ids)}
        m, n = len(self.publisher_ids), len(self.campaign_ids)
        self.budgets = np.asarray(budgets, dtype=np.int64).copy()
        if self.budgets.shape != (n,):
            raise ValueError("one budget per campaign required")
        self.horizon = int(horizon)
        self.clock = 0
        self.pub_spend = np.zeros(m, dtype=np.int64)
        self.pub_cost = np.zeros(m, dtype=np.int64)
        self.camp_cost = np.zeros(n, dtype=np.int64)
        self.camp_clicks = np.zeros(n, dtype=np.int64)
        self.camp_impressions = np.zeros(n, dtype=np.int64)
        self.camp_installs = np.zeros(n, dtype=np.int64)

    @property
    def n_publishers(self) -> int:
        return len(self.publisher_ids)

    @property
    def n_campaigns(self) -> int:
        return len(self.campaign_ids)

    def total_spend(self) -> int:
        return int(self.pub_spend.sum())

    def total_cost(self) -> int:
        return int(self.camp_cost.sum())

    def remaining(self) -> np.ndarray:
        return self.budgets - self.camp_cost

    def budget_fraction(self, i: int) -> float:
        """Leftover budget fraction (B_i - cost_i) / B_i of campaign index ``i``."""
        return float(self.budgets[i] - self.camp_cost[i]) / float(self.budgets[i])

    def margins(self) -> np.ndarray:
        total = self.total_spend()
        if total <= 0:
            raise UndefinedMargin("no spend yet")
        return (self.pub_cost - self.pub_spend) / float(total)

    def margin_at(self, j: int) -> float:
        total = self.total_spend()
        if total <= 0:
            raise UndefinedMargin("no spend yet")
        return float(self.pub_cost[j] - self.pub_spend[j]) / float(total)

    def efficiency_at(self, i: int, target_cpi: float) -> Optional[float]:
        installs = int(self.camp_installs[i])
        if installs == 0:
            return None
        return from_micros(self.camp_cost[i]) / installs / target_cpi

    def apply(self, record) -> None:
        """Fold one event record into the aggregates."""
        if record.kind == "auction":
            j = self.pub_index[record.publisher_id]
            i = self.camp_index[record.campaign_id]
            self.pub_spend[j] += record.spend
            self.pub_cost[j] += record.cost
            self.camp_cost[i] += record.cost
            self.camp_clicks[i] += record.clicks
            self.camp_impressions[i] += record.wins
            self.clock = max(self.clock, record.minute + 1)
        elif record.kind == "install":
            self.camp_installs[self.camp_index[record.campaign_id]] += 1
            self.clock = max(self.clock, record.minute + 1)
        else:
            raise ValueError(f"unknown record kind {record.kind!r}")

    @classmethod
    def replay(cls, records: Iterable, publisher_ids, campaign_ids, budgets, horizon) -> "LedgerState":
        ledger = cls(publisher_ids, campaign_ids, budgets, horizon)
        for rec in records:
            ledger.apply(rec)
        return ledger

    def aggregates(self) -> dict:
        return {
            "clock": self.clock,
            "pub_spend": self.pub_spend.tolist(),
            "pub_cost": self.pub_cost.tolist(),
            "camp_cost": self.camp_cost.tolist(),
            "camp_clicks": self.camp_clicks.tolist(),
            "camp_impressions": self.camp_impressions.tolist(),
            "camp_installs": self.camp_installs.tolist(),
        }


def margin(ledger: LedgerState, publisher_id: str) -> float:
    """(cost_j - spend_j) / sum_j spend_j; raises UndefinedMargin at zero spend."""
    return ledger.margin_at(ledger.pub_index[publisher_id])


def efficiency(ledger: LedgerState, campaign: Campaign) -> Optional[float]:
    """Actual CPI over target CPI, or None while the campaign has no installs."""
    return ledger.efficiency_at(ledger.camp_index[campaign.id], campaign.target_cpi)


def is_happy(eta: Optional[float], epsilon: float, cost: float = 0.0) -> bool:
    """True iff eta < 1 + epsilon.

    An undefined efficiency counts as happy while nothing has been charged and
    as unhappy once the campaign has cost but no installs.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if eta is None:
        return cost <= 0
    if math.isnan(eta):
        raise ValueError("eta is NaN")
    return eta < 1.0 + epsilon
