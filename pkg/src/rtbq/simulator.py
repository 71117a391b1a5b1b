"""Minute-granularity RTB simulator with hourly action epochs.

Each publisher runs its auctions once a minute for the campaign with the
highest current bid. Opportunities, wins, clicks, installs and install delays
each draw from their own random substream, in hour-aligned blocks, so runs
that differ only in pricing policy see the same environment randomness.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import (AuctionRecord, Campaign, InstallRecord, LedgerState, PendingInstall, Publisher,
                     UndefinedMargin, from_micros, is_happy, to_micros)

AUCTION_TICK = 1
ACTION_EPOCH = 60
MINUTES_PER_DAY = 1440
EVENT_LOG_VERSION = 1

# substream slots under a run's SeedSequence
OPPORTUNITIES, WINS, CLICKS, DELAYS = range(4)


@dataclass(frozen=True)
class DelayModel:
    """Click-to-install notification lag in minutes.

    ``exponential`` draws from an exponential with the given median, truncated
    at ``max_minutes``; ``point`` always returns ``point_minutes``.
    """

    kind: str = "exponential"
    median_minutes: float = float(MINUTES_PER_DAY)
    max_minutes: int = 7 * MINUTES_PER_DAY
    point_minutes: int = 0

    def __post_init__(self):
        if self.kind not in ("exponential", "point"):
            raise ValueError(f"unknown delay model {self.kind!r}")
        if self.kind == "exponential" and not (self.median_minutes > 0 and self.max_minutes > 0):
            raise ValueError("exponential delay needs positive median and max")
        if self.point_minutes < 0:
            raise ValueError("point delay must be >= 0")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "point":
            return np.full(size, self.point_minutes, dtype=np.int64)
        rate = math.log(2.0) / self.median_minutes
        f_max = -math.expm1(-rate * self.max_minutes)
        u = rng.random(size)
        d = -np.log1p(-u * f_max) / rate
        return np.minimum(np.floor(d), self.max_minutes).astype(np.int64)


def sample_delay(model: DelayModel, rng: np.random.Generator) -> int:
    return int(model.sample(rng, 1)[0])


@dataclass(frozen=True)
class SimConfig:
    horizon_minutes: int = 7 * MINUTES_PER_DAY
    delay: DelayModel = field(default_factory=DelayModel)
    clearing_fraction: float = 0.5
    price_scale: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.horizon_minutes <= 0 or self.horizon_minutes % ACTION_EPOCH:
            raise ValueError("horizon must be a positive multiple of the action epoch")
        if not 0.0 <= self.clearing_fraction <= 1.0:
            raise ValueError("clearing_fraction must be in [0, 1]")
        if not self.price_scale > 0:
            raise ValueError("price_scale must be > 0")

    @property
    def auction_tick(self) -> int:
        return AUCTION_TICK

    @property
    def action_epoch(self) -> int:
        return ACTION_EPOCH

    def to_dict(self) -> dict:
        d = asdict(self)
        d["auction_tick"] = AUCTION_TICK
        d["action_epoch"] = ACTION_EPOCH
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d.pop("auction_tick", None)
        d.pop("action_epoch", None)
        d["delay"] = DelayModel(**d.get("delay", {}))
        return cls(**d)


@dataclass(frozen=True)
class WinModel:
    """Sigmoid bid landscape of one publisher.

    Prices are quoted per impression; the landscape is evaluated after
    multiplying by ``price_scale`` (per-mille by default).
    """

    landscape_a: float
    floor_price: float
    price_scale: float = 1000.0

    def __post_init__(self):
        if not self.landscape_a > 0:
            raise ValueError("landscape_a must be > 0")


def win_probability(bid: float, model: WinModel) -> float:
    if bid < 0:
        raise ValueError("bid must be >= 0")
    if bid < model.floor_price:
        return 0.0
    x = (model.floor_price - bid) * model.price_scale
    return 1.0 / (1.0 + model.landscape_a * math.exp(x))


def win_probabilities(bids: np.ndarray, landscape_a: np.ndarray, floor: np.ndarray, scale: float) -> np.ndarray:
    """Vectorised ``win_probability`` over publisher rows."""
    bids = np.asarray(bids, dtype=np.float64)
    a = np.asarray(landscape_a, dtype=np.float64)
    fl = np.asarray(floor, dtype=np.float64)
    if bids.ndim == 2:
        a, fl = a[:, None], fl[:, None]
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + a * np.exp((fl - bids) * scale))
    return np.where(bids < fl, 0.0, p)


def select_campaign(bids: Sequence[float], eligible: Sequence[bool]) -> Optional[int]:
    """Index of the eligible campaign with the highest bid, lowest index on ties."""
    best, best_bid = None, -math.inf
    for i, (b, ok) in enumerate(zip(bids, eligible)):
        if ok and b > best_bid:
            best, best_bid = i, b
    return best


class _HourDraws:
    __slots__ = ("hour", "opp", "u_win", "u_click")

    def __init__(self, hour, opp, u_win, u_click):
        self.hour = hour
        self.opp = opp
        self.u_win = u_win
        self.u_click = u_click


class Simulator:
    """One simulated run over a fixed set of publishers and campaigns.

    ``stream`` extends ``config.seed`` into the run's SeedSequence entropy so
    that e.g. training episodes and the test week get independent randomness.
    Campaigns with fewer than ``min_installs`` baseline installs never bid.
    """

    def __init__(self, publishers: Sequence[Publisher], campaigns: Sequence[Campaign],
                 config: SimConfig, stream: Sequence[int] = (), record_events: bool = False,
                 min_installs: int = 10, epsilon: float = 0.2):
        self.config = config
        self.publishers = list(publishers)
        self.campaigns = [c for c in campaigns if c.baseline_installs >= min_installs]
        self.epsilon = epsilon
        m, n = len(self.publishers), len(self.campaigns)
        if m == 0:
            raise ValueError("need at least one publisher")
        self.floor = np.array([p.floor_price for p in self.publishers])
        self.landscape_a = np.array([p.landscape_a for p in self.publishers])
        self.request_rate = np.array([p.request_rate for p in self.publishers])
        self.pctr = np.array([[p.pctr[c.id] for c in self.campaigns] for p in self.publishers]).reshape(m, n)
        self.pcvr = np.array([c.pcvr for c in self.campaigns])
        self.true_pcvr = np.array([c.true_pcvr for c in self.campaigns])
        self.target_cpi = np.array([c.target_cpi for c in self.campaigns])
        self.base_cost = self.target_cpi * self.pcvr
        self.base_bid = self.pctr * self.base_cost[None, :]
        self.bid = self.base_bid.copy()
        self.cost = np.broadcast_to(self.base_cost, (m, n)).copy()
        self.floor_micro = np.array([to_micros(f) for f in self.floor], dtype=np.int64)

        self.ledger = LedgerState([p.id for p in self.publishers], [c.id for c in self.campaigns],
                                  [to_micros(c.budget) for c in self.campaigns], config.horizon_minutes)
        self.eligible = self.ledger.remaining() > 0
        self.hour_wins = np.zeros((m, n), dtype=np.int64)
        self.epoch = 0
        self.pending: list = []
        self._seq = 0
        self.record_events = record_events
        self.events: list = []
        self.metric_rows: list = []

        root = np.random.SeedSequence([int(config.seed), *[int(s) for s in stream]])
        kids = root.spawn(4)
        self.rng_opp = np.random.default_rng(kids[OPPORTUNITIES])
        self.rng_win = np.random.default_rng(kids[WINS])
        self.rng_click = np.random.default_rng(kids[CLICKS])
        self.rng_delay = [np.random.default_rng(s) for s in kids[DELAYS].spawn(max(n, 1))]
        self._draws: Optional[_HourDraws] = None
        self.refresh_prices()

    # pricing
    def set_quote(self, j: int, i: int, bid: float, cost: float) -> None:
        self.bid[j, i] = bid
        self.cost[j, i] = cost

    def reset_quotes(self) -> None:
        self.bid[:] = self.base_bid
        self.cost[:] = self.base_cost[None, :]

    def refresh_prices(self) -> None:
        """Recompute integer prices and win probabilities after quote changes."""
        scale = self.config.price_scale
        self.p_win = win_probabilities(self.bid, self.landscape_a, self.floor, scale)
        self.bid_micro = np.rint(self.bid * 1e6).astype(np.int64)
        self.cost_micro = np.rint(self.cost * 1e6).astype(np.int64)
        fl = self.floor_micro[:, None]
        clear = fl + np.rint(self.config.clearing_fraction * (self.bid_micro - fl)).astype(np.int64)
        self.clear_micro = np.where(self.bid_micro >= fl, clear, 0)

    # event loop
    @property
    def clock(self) -> int:
        return self.ledger.clock

    @property
    def done(self) -> bool:
        return self.clock >= self.config.horizon_minutes

    def _hour_draws(self, hour: int) -> _HourDraws:
        if self._draws is None or self._draws.hour != hour:
            m = len(self.publishers)
            opp = self.rng_opp.poisson(self.request_rate, size=(ACTION_EPOCH, m))
            k = max(int(opp.max()), 1)
            u_win = self.rng_win.random((ACTION_EPOCH, m, k), dtype=np.float32)
            u_click = self.rng_click.random((ACTION_EPOCH, m, k), dtype=np.float32)
            self._draws = _HourDraws(hour, opp, u_win, u_click)
        return self._draws

    def selection(self) -> np.ndarray:
        """Campaign index serving each publisher this minute, -1 if none."""
        if not self.eligible.any():
            return np.full(len(self.publishers), -1)
        masked = np.where(self.eligible[None, :], self.bid, -np.inf)
        sel = np.argmax(masked, axis=1)
        return np.where(np.isneginf(masked[np.arange(len(sel)), sel]), -1, sel)

    def run_minute(self) -> None:
        self.run_minutes(1)

    def run_minutes(self, n: int) -> None:
        n = min(int(n), self.config.horizon_minutes - self.clock)
        while n > 0:
            hour, offset = divmod(self.clock, ACTION_EPOCH)
            take = min(n, ACTION_EPOCH - offset)
            draws = self._hour_draws(hour)
            a, end = offset, offset + take
            while a < end:
                a = self._simulate_span(draws, a, end)
            self._deliver()
            n -= take

    def _simulate_span(self, draws: _HourDraws, a: int, end: int) -> int:
        """Run minutes [a, end) of the current hour with a fixed campaign
        selection; stop early after the minute in which a budget runs out."""
        sel_all = self.selection()
        js = np.flatnonzero(sel_all >= 0)
        start_clock = self.clock
        if js.size == 0:
            self.ledger.clock += end - a
            return end
        sel = sel_all[js]
        opp = draws.opp[a:end][:, js]
        k = draws.u_win.shape[2]
        valid = np.arange(k)[None, None, :] < opp[:, :, None]
        won = valid & (draws.u_win[a:end][:, js, :] < self.p_win[js, sel][None, :, None])
        u_click = draws.u_click[a:end][:, js, :]
        pctr = self.pctr[js, sel]
        clicked = won & (u_click < pctr[None, :, None])
        # install draws reuse the click uniform: P(u < pctr*pcvr | u < pctr) = pcvr
        installed = won & (u_click < (pctr * self.true_pcvr[sel])[None, :, None])
        wins = won.sum(axis=2)
        clicks = clicked.sum(axis=2)
        installs = installed.sum(axis=2)
        spend = wins * self.clear_micro[js, sel][None, :]
        cost = clicks * self.cost_micro[js, sel][None, :]

        n = end - a
        remaining = self.ledger.remaining()
        cut, exhausted = n, []
        for c in np.unique(sel):
            per_minute = cost[:, sel == c].sum(axis=1)
            first = int(np.searchsorted(np.cumsum(per_minute), remaining[c], side="left"))
            if first < cut - 1:
                cut, exhausted = first + 1, [c]
            elif first == cut - 1:
                exhausted.append(c)
        if cut < n:
            opp, wins, clicks, installs, spend, cost = (x[:cut] for x in (opp, wins, clicks, installs, spend, cost))
        for c in exhausted:
            cols = sel == c
            flat = cost[:, cols].ravel()
            before = np.cumsum(flat) - flat
            cost[:, cols] = np.minimum(flat, np.maximum(remaining[c] - before, 0)).reshape(cut, -1)

        led = self.ledger
        led.pub_spend[js] += spend.sum(axis=0)
        led.pub_cost[js] += cost.sum(axis=0)
        np.add.at(led.camp_cost, sel, cost.sum(axis=0))
        np.add.at(led.camp_clicks, sel, clicks.sum(axis=0))
        np.add.at(led.camp_impressions, sel, wins.sum(axis=0))
        self.hour_wins[js, sel] += wins.sum(axis=0)
        for t, col in np.argwhere(installs > 0):
            c = int(sel[col])
            minute = start_clock + int(t)
            for d in self.config.delay.sample(self.rng_delay[c], int(installs[t, col])):
                item = PendingInstall(minute + int(d), minute, self.campaigns[c].id, self.publishers[js[col]].id)
                heapq.heappush(self.pending, (item.notify_time, self._seq, item))
                self._seq += 1
        if self.record_events:
            self._record(start_clock, js, sel, opp, wins, spend, clicks, cost, installs)
        led.clock += cut
        self.eligible &= led.remaining() > 0
        return a + cut

    def _record(self, start_clock, js, sel, opp, wins, spend, clicks, cost, installs) -> None:
        for t in range(opp.shape[0]):
            for col, j in enumerate(js):
                if opp[t, col] == 0:
                    continue
                i = int(sel[col])
                self.events.append(AuctionRecord(
                    minute=start_clock + t, publisher_id=self.publishers[j].id, campaign_id=self.campaigns[i].id,
                    bid=int(self.bid_micro[j, i]), opportunities=int(opp[t, col]), wins=int(wins[t, col]),
                    spend=int(spend[t, col]), clicks=int(clicks[t, col]), cost=int(cost[t, col]),
                    installs=int(installs[t, col])))

    def _deliver(self) -> None:
        clock = self.clock
        while self.pending and self.pending[0][0] < clock:
            _, _, item = heapq.heappop(self.pending)
            self.ledger.camp_installs[self.ledger.camp_index[item.campaign_id]] += 1
            if self.record_events:
                self.events.append(InstallRecord(item.notify_time, item.click_time,
                                                 item.publisher_id, item.campaign_id))

    def run_epoch(self, controller=None) -> None:
        """Let the controller reprice, then simulate one action epoch."""
        if self.clock % ACTION_EPOCH:
            raise RuntimeError("run_epoch called off an epoch boundary")
        self.metric_rows.append(self.metrics())
        if controller is not None:
            controller.on_epoch(self)
        self.hour_wins[:] = 0
        self.epoch += 1
        self.run_minutes(ACTION_EPOCH)

    def run(self, controller=None) -> "Simulator":
        while not self.done:
            self.run_epoch(controller)
        if controller is not None and hasattr(controller, "finish"):
            controller.finish(self)
        self.metric_rows.append(self.metrics())
        return self

    # reporting
    def metrics(self) -> dict:
        led = self.ledger
        try:
            margin = float(led.margins().sum())
        except UndefinedMargin:
            margin = 0.0
        total_budget = int(led.budgets.sum())
        return {
            "epoch": self.epoch,
            "clock": self.clock,
            "spend": from_micros(led.total_spend()),
            "cost": from_micros(led.total_cost()),
            "margin": margin,
            "budget_util": led.total_cost() / total_budget if total_budget else 0.0,
            "happy": self.happy_count(),
            "installs": int(led.camp_installs.sum()),
        }

    def happy_count(self) -> int:
        led = self.ledger
        return sum(
            is_happy(led.efficiency_at(i, c.target_cpi), self.epsilon, float(led.camp_cost[i]))
            for i, c in enumerate(self.campaigns))

    def ledger_rows(self) -> list:
        """Per-publisher and per-campaign ledger snapshot at the current clock."""
        led = self.ledger
        try:
            margins = led.margins()
        except UndefinedMargin:
            margins = np.full(led.n_publishers, math.nan)
        rows = []
        for j, p in enumerate(self.publishers):
            rows.append({"epoch": self.epoch, "kind": "publisher", "id": p.id,
                         "spend": int(led.pub_spend[j]), "cost": int(led.pub_cost[j]), "installs": "",
                         "margin": float(margins[j]), "eta": ""})
        for i, c in enumerate(self.campaigns):
            eta = led.efficiency_at(i, c.target_cpi)
            rows.append({"epoch": self.epoch, "kind": "campaign", "id": c.id, "spend": "",
                         "cost": int(led.camp_cost[i]), "installs": int(led.camp_installs[i]),
                         "margin": "", "eta": "" if eta is None else eta})
        return rows


def write_event_log(events, path) -> None:
    """Append-only newline-delimited records, header line first."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": "rtbq-events", "version": EVENT_LOG_VERSION}) + "\n")
        for ev in events:
            fh.write(json.dumps(asdict(ev), sort_keys=True) + "\n")


def read_event_log(path) -> list:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "rtbq-events" or header.get("version") != EVENT_LOG_VERSION:
            raise ValueError(f"unsupported event log header {header}")
        out = []
        for line in fh:
            d = json.loads(line)
            out.append(AuctionRecord(**d) if d["kind"] == "auction" else InstallRecord(**d))
    return out
