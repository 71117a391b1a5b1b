"""Scenario generation, training, evaluation against the PI baseline, and lambda sweeps."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .action import ActionSpace
from .baseline import PIController, PiConfig
from .domain import Campaign, Publisher, from_micros
from .policy import PolicyController, QLearningController, intuitive_policy, noop_policy
from .qlearning import ExplorationSchedule, QTable, extract_policy
from .quantizer import QuantizerConfig
from .reward import RewardConfig
from .simulator import DelayModel, SimConfig, Simulator

log = logging.getLogger(__name__)

SCENARIO_FORMAT = "rtbq-scenario"
SCENARIO_VERSION = 1
SWEEP_FORMAT = "rtbq-sweep"
CURVE_FORMAT = "rtbq-curve"
REPORT_FORMAT = "rtbq-report"
CSV_VERSION = 1

# stream ids appended to the scenario seed
WARMUP, TRAIN, TEST, EXPLORE = 0, 1, 2, 3

METRICS = ("spend", "margin", "budget_util", "happy")


@dataclass(frozen=True)
class GeneratorSpec:
    """Ranges of the draws used to build a synthetic scenario.

    Prices are per impression. pCTR of a (publisher, campaign) pair is the
    campaign's base pCTR times a publisher factor times log-normal pair noise,
    clipped to [0, 1]. The predicted pCVR is uniform; the true install rate
    divides it by a log-normal calibration error, so plain eCPM pricing lands
    campaigns on both sides of their target CPI. Budgets are drawn uniformly,
    or log-uniformly when ``budget_log_uniform`` is set; a warm-up week of
    plain eCPM bidding then plays the role of historical data: its advertiser
    cost times ``budget_headroom`` becomes the campaign budget and its install
    count the campaign's baseline installs.
    """

    n_publishers: int = 10
    n_campaigns: int = 25
    floor_price: tuple = (0.0005, 0.003)
    landscape_a: tuple = (0.5, 5.0)
    request_rate: tuple = (4.0, 12.0)
    pctr: tuple = (0.03, 0.1)
    publisher_ctr_factor: tuple = (0.5, 1.5)
    pctr_pair_sigma: float = 0.3
    pcvr: tuple = (0.1, 0.3)
    pcvr_error_sigma: float = 0.3
    target_cpi: tuple = (0.1, 0.5)
    budget: tuple = (10.0, 2000.0)
    budget_log_uniform: bool = True
    budget_headroom: float = 1.25
    warmup_minutes: int = 7 * 1440
    min_installs: int = 10

    def __post_init__(self):
        if self.n_publishers < 1 or self.n_campaigns < 1:
            raise ValueError("need at least one publisher and one campaign")
        for name in ("floor_price", "landscape_a", "request_rate", "pctr", "publisher_ctr_factor", "pcvr",
                     "target_cpi", "budget"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"degenerate range for {name}: {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.pctr_pair_sigma < 0 or self.pcvr_error_sigma < 0 or self.budget_headroom < 1.0:
            raise ValueError("pctr_pair_sigma and pcvr_error_sigma must be >= 0, budget_headroom >= 1")
        if self.landscape_a[0] <= 0 or self.target_cpi[0] <= 0 or self.budget[0] <= 0:
            raise ValueError("landscape_a, target_cpi and budget ranges must be positive")
        if self.floor_price[0] < 0 or self.request_rate[0] < 0 or self.publisher_ctr_factor[0] < 0:
            raise ValueError("floor_price and request_rate must be non-negative")
        for name in ("pctr", "pcvr"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi > 1:
                raise ValueError(f"{name} range must lie in [0, 1]")

    @classmethod
    def for_scale(cls, scale: str) -> "GeneratorSpec":
        if scale == "desk":
            return cls()
        if scale == "paper":
            return cls(n_publishers=183, n_campaigns=400)
        raise ValueError(f"unknown scale {scale!r}")


@dataclass(frozen=True)
class Scenario:
    publishers: tuple
    campaigns: tuple
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    action_space: ActionSpace = field(default_factory=ActionSpace)
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 0
    min_installs: int = 10
    generator: Optional[dict] = None

    def simulator(self, stream: Sequence[int], record_events: bool = False) -> Simulator:
        return Simulator(self.publishers, self.campaigns, self.sim, stream=stream,
                         record_events=record_events, min_installs=self.min_installs,
                         epsilon=self.quantizer.epsilon)

    def to_dict(self) -> dict:
        return {
            "format": SCENARIO_FORMAT,
            "version": SCENARIO_VERSION,
            "seed": self.seed,
            "min_installs": self.min_installs,
            "generator": self.generator,
            "quantizer": self.quantizer.to_dict(),
            "action_space": self.action_space.to_dict(),
            "sim": self.sim.to_dict(),
            "publishers": [
                {"id": p.id, "floor_price": p.floor_price, "landscape_a": p.landscape_a,
                 "request_rate": p.request_rate, "pctr": dict(p.pctr)} for p in self.publishers],
            "campaigns": [asdict(c) for c in self.campaigns],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if d.get("format") != SCENARIO_FORMAT or d.get("version") != SCENARIO_VERSION:
            raise ValueError("not a version-1 rtbq scenario")
        return cls(
            publishers=tuple(Publisher(**p) for p in d["publishers"]),
            campaigns=tuple(Campaign(**c) for c in d["campaigns"]),
            quantizer=QuantizerConfig(**d["quantizer"]),
            action_space=ActionSpace(**d["action_space"]),
            sim=SimConfig.from_dict(d["sim"]),
            seed=d["seed"],
            min_installs=d["min_installs"],
            generator=d.get("generator"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _uniform(rng: np.random.Generator, bounds, size=None):
    lo, hi = bounds
    return rng.uniform(lo, hi, size) if hi > lo else np.full(size, lo) if size else lo


def generate_scenario(spec: GeneratorSpec, seed: int, quantizer: Optional[QuantizerConfig] = None,
                      action_space: Optional[ActionSpace] = None, sim: Optional[SimConfig] = None) -> Scenario:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 99]))
    m, n = spec.n_publishers, spec.n_campaigns
    cids = [f"c{i:03d}" for i in range(n)]
    pids = [f"p{j:03d}" for j in range(m)]
    floors = _uniform(rng, spec.floor_price, m)
    a = _uniform(rng, spec.landscape_a, m)
    rates = _uniform(rng, spec.request_rate, m)
    pub_factor = _uniform(rng, spec.publisher_ctr_factor, m)
    camp_ctr = _uniform(rng, spec.pctr, n)
    pair = rng.lognormal(0.0, spec.pctr_pair_sigma, (m, n)) if spec.pctr_pair_sigma > 0 else np.ones((m, n))
    pctr = np.clip(pub_factor[:, None] * camp_ctr[None, :] * pair, 0.0, 1.0)
    pcvr = _uniform(rng, spec.pcvr, n)
    # predictions are off by a log-normal calibration factor per campaign
    error = rng.lognormal(0.0, spec.pcvr_error_sigma, n) if spec.pcvr_error_sigma > 0 else np.ones(n)
    true_pcvr = np.clip(pcvr / error, 0.0, 1.0)
    cpi = _uniform(rng, spec.target_cpi, n)
    if spec.budget_log_uniform:
        budgets = np.exp(_uniform(rng, tuple(math.log(b) for b in spec.budget), n))
    else:
        budgets = _uniform(rng, spec.budget, n)
    publishers = tuple(
        Publisher(pids[j], float(floors[j]), float(a[j]), float(rates[j]),
                  {cids[i]: float(pctr[j, i]) for i in range(n)}) for j in range(m))
    sim_cfg = sim or SimConfig()
    sim_cfg = replace(sim_cfg, seed=int(seed))
    prior = tuple(Campaign(cids[i], float(cpi[i]), float(budgets[i]), float(pcvr[i]), baseline_installs=0,
                           true_pcvr=float(true_pcvr[i])) for i in range(n))

    warm_cfg = replace(sim_cfg, horizon_minutes=spec.warmup_minutes)
    warm = Simulator(publishers, prior, warm_cfg, stream=(WARMUP,), min_installs=0).run()
    led = warm.ledger
    campaigns = []
    for i, c in enumerate(prior):
        spent = from_micros(led.camp_cost[i])
        campaigns.append(replace(c, budget=spent * spec.budget_headroom if spent > 0 else c.budget,
                                 baseline_installs=int(led.camp_installs[i])))
    gen = asdict(spec)
    gen["distributions"] = ("uniform per range field; pctr = publisher factor x campaign pctr x "
                            "lognormal(0, pctr_pair_sigma), clipped to [0, 1]; budget = warm-up advertiser "
                            "cost x budget_headroom (true budget if never charged); baseline_installs = "
                            "warm-up installs")
    return Scenario(publishers=publishers, campaigns=tuple(campaigns),
                    quantizer=quantizer or QuantizerConfig(), action_space=action_space or ActionSpace(),
                    sim=sim_cfg, seed=int(seed), min_installs=spec.min_installs, generator=gen)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    gamma: float = 0.9
    alpha_decay: float = 0.0
    exploration: ExplorationSchedule = field(default_factory=ExplorationSchedule)
    clip_eta: bool = True


def train(scenario: Scenario, lam: float, episodes: int, cfg: TrainConfig = TrainConfig(),
          table: Optional[QTable] = None) -> QTable:
    """Run ``episodes`` simulated weeks with Boltzmann exploration, updating one Q-table."""
    qc, space = scenario.quantizer, scenario.action_space
    if table is None:
        table = QTable(qc.n_states, space.n_actions, cfg.alpha, cfg.gamma, cfg.alpha_decay)
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, EXPLORE]))
    ctl = QLearningController(qc, space, table, RewardConfig(lam), cfg.exploration, rng, clip_eta=cfg.clip_eta)
    for ep in range(episodes):
        ctl.pending = {}
        scenario.simulator((TRAIN, ep)).run(ctl)
    return table


@dataclass
class RunReport:
    lam: Optional[float]
    seed: int
    final: dict
    baseline: dict
    deltas: dict
    rows: list = field(default_factory=list)
    baseline_rows: list = field(default_factory=list)

    def flat(self) -> dict:
        out = {"lambda": self.lam, "seed": self.seed}
        for k in METRICS:
            out[k] = self.final[k]
        for k in METRICS:
            out[f"base_{k}"] = self.baseline[k]
        for k in METRICS:
            out[f"delta_{k}_pct"] = self.deltas[k]
        return out


def delta_pct(x_policy: float, x_baseline: float) -> float:
    """100 (x - x_base) / |x_base|; 0 when both are 0, signed inf when only the baseline is."""
    if x_baseline == 0:
        if x_policy == 0:
            return 0.0
        return math.copysign(math.inf, x_policy)
    return 100.0 * (x_policy - x_baseline) / abs(x_baseline)


def _final(metrics: dict) -> dict:
    return {k: metrics[k] for k in METRICS}


def evaluate(scenario: Scenario, policy, test_stream: int = 0, pi_cfg: PiConfig = PiConfig(),
             lam: Optional[float] = None, record_events: bool = False):
    """One test week with a frozen policy next to the PI baseline on identical randomness.

    ``policy`` is a state -> action array, a QTable, ``"baseline"`` (the PI
    controller itself), ``"intuitive"`` or ``"noop"``. Returns the report and
    the two finished simulators (policy, baseline).
    """
    qc, space = scenario.quantizer, scenario.action_space
    stream = (TEST, test_stream)
    base_sim = scenario.simulator(stream, record_events).run(PIController(pi_cfg))
    if isinstance(policy, str) and policy == "baseline":
        ctl = PIController(pi_cfg)
    elif isinstance(policy, str) and policy == "intuitive":
        ctl = PolicyController(qc, space, intuitive_policy(qc, space))
    elif isinstance(policy, str) and policy == "noop":
        ctl = PolicyController(qc, space, noop_policy(qc, space))
    else:
        if isinstance(policy, QTable):
            if policy.shape != (qc.n_states, space.n_actions):
                raise ValueError(f"q-table shape {policy.shape} does not match scenario "
                                 f"({qc.n_states}, {space.n_actions})")
            policy = extract_policy(policy)
        ctl = PolicyController(qc, space, policy)
    sim = scenario.simulator(stream, record_events).run(ctl)
    final, base = _final(sim.metrics()), _final(base_sim.metrics())
    deltas = {k: delta_pct(final[k], base[k]) for k in METRICS}
    report = RunReport(lam, scenario.seed, final, base, deltas, sim.metric_rows, base_sim.metric_rows)
    return report, sim, base_sim


def evaluate_weeks(scenario: Scenario, policy, weeks: int = 1, pi_cfg: PiConfig = PiConfig(),
                   lam: Optional[float] = None) -> RunReport:
    """Evaluate on test streams 0..weeks-1 and report deltas of the week-averaged metrics.

    Per-epoch rows come from the first week.
    """
    if weeks < 1:
        raise ValueError("weeks must be >= 1")
    reports = [evaluate(scenario, policy, test_stream=k, pi_cfg=pi_cfg, lam=lam)[0] for k in range(weeks)]
    final = {k: float(np.mean([r.final[k] for r in reports])) for k in METRICS}
    base = {k: float(np.mean([r.baseline[k] for r in reports])) for k in METRICS}
    deltas = {k: delta_pct(final[k], base[k]) for k in METRICS}
    first = reports[0]
    return RunReport(lam, scenario.seed, final, base, deltas, first.rows, first.baseline_rows)


def _train_eval(args) -> RunReport:
    scenario, lam, episodes, train_cfg, pi_cfg, weeks = args
    table = train(scenario, lam, episodes, train_cfg)
    return evaluate_weeks(scenario, table, weeks, pi_cfg=pi_cfg, lam=lam)


def _run_jobs(jobs: list, n_workers: int) -> list:
    if n_workers <= 1 or len(jobs) <= 1:
        return [_train_eval(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_train_eval, jobs))


def sweep_lambda(scenario: Scenario, lambdas: Sequence[float], episodes: int,
                 train_cfg: TrainConfig = TrainConfig(), pi_cfg: PiConfig = PiConfig(),
                 jobs: int = 1, test_weeks: int = 1) -> list:
    if not len(lambdas):
        raise ValueError("lambdas must be non-empty")
    return _run_jobs([(scenario, float(lam), episodes, train_cfg, pi_cfg, test_weeks) for lam in lambdas], jobs)


def sweep_seeds(seeds: Sequence[int], lambdas: Sequence[float], episodes: int,
                spec: GeneratorSpec = GeneratorSpec(), train_cfg: TrainConfig = TrainConfig(),
                pi_cfg: PiConfig = PiConfig(), jobs: int = 1, test_weeks: int = 1) -> list:
    """Sweep every lambda on an independently generated scenario per seed.

    Reports come back ordered by (seed, lambda) whatever the worker count.
    """
    if not len(lambdas):
        raise ValueError("lambdas must be non-empty")
    scenarios = [generate_scenario(spec, s) for s in seeds]
    work = [(sc, float(lam), episodes, train_cfg, pi_cfg, test_weeks) for sc in scenarios for lam in lambdas]
    return _run_jobs(work, jobs)


DEFAULT_LAMBDAS = tuple(round(0.1 * k, 1) for k in range(11))


def summarize(reports: Sequence[RunReport]) -> list:
    """Mean and standard error of every delta per lambda, in first-seen lambda order."""
    by_lam: dict = {}
    for r in reports:
        by_lam.setdefault(r.lam, []).append(r)
    rows = []
    for lam, group in by_lam.items():
        row = {"lambda": lam, "n": len(group)}
        for k in METRICS:
            vals = np.array([g.deltas[k] for g in group], dtype=np.float64)
            row[f"mean_delta_{k}_pct"] = float(vals.mean())
            row[f"se_delta_{k}_pct"] = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        rows.append(row)
    return rows


# CSV I/O ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_rows(path, fmt: str, rows: Sequence[dict]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# {fmt} v{CSV_VERSION}\n")
        if not rows:
            return
        w = csv.writer(fh, lineterminator="\n")
        cols = list(rows[0].keys())
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def _parse(v: str):
    if v == "":
        return None
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_rows(path, fmt: str) -> list:
    with Path(path).open(newline="") as fh:
        header = fh.readline().strip()
        if header != f"# {fmt} v{CSV_VERSION}":
            raise ValueError(f"expected {fmt} v{CSV_VERSION} file, got header {header!r}")
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_sweep(path, reports: Sequence[RunReport]) -> None:
    write_rows(path, SWEEP_FORMAT, [r.flat() for r in reports])


def read_sweep(path) -> list:
    out = []
    for row in read_rows(path, SWEEP_FORMAT):
        lam = row["lambda"]
        out.append(RunReport(
            lam=None if lam is None else float(lam), seed=int(row["seed"]),
            final={k: row[k] for k in METRICS},
            baseline={k: row[f"base_{k}"] for k in METRICS},
            deltas={k: float(row[f"delta_{k}_pct"]) for k in METRICS}))
    return out


def write_curve(path, reports: Sequence[RunReport]) -> None:
    write_rows(path, CURVE_FORMAT, summarize(reports))


def write_report(path, report: RunReport) -> None:
    """Per-epoch metric rows of the policy and baseline runs side by side, then the final totals."""
    rows = []
    for tag, series in (("policy", report.rows), ("baseline", report.baseline_rows)):
        for r in series:
            rows.append({"run": tag, **r})
    write_rows(path, REPORT_FORMAT, rows)
    write_rows(Path(path).with_name(Path(path).stem + "_summary.csv"), SWEEP_FORMAT, [report.flat()])
