import math
from dataclasses import replace

import numpy as np
import pytest

from rtbq.action import ActionSpace
from rtbq.baseline import PiConfig
from rtbq.domain import Campaign, Publisher, from_micros
from rtbq.harness import (DEFAULT_LAMBDAS, GeneratorSpec, RunReport, Scenario, TrainConfig, delta_pct, evaluate,
                          generate_scenario, read_rows, read_sweep, summarize, sweep_lambda, train, write_curve,
                          write_report, write_sweep)
from rtbq.policy import PolicyController, QLearningController
from rtbq.qlearning import ExplorationSchedule, QTable, extract_policy
from rtbq.quantizer import QuantizerConfig
from rtbq.reward import RewardConfig
from rtbq.simulator import DelayModel, SimConfig

SMALL = GeneratorSpec(n_publishers=4, n_campaigns=6, warmup_minutes=1440)


@pytest.fixture(scope="module")
def small():
    sc = generate_scenario(SMALL, 3)
    return replace(sc, sim=replace(sc.sim, horizon_minutes=1440))


def micro(horizon=1440, rate=20.0):
    """One publisher, one campaign; every opportunity is won, clicked and converts at once."""
    camp = Campaign("c0", target_cpi=1.0, budget=1e6, pcvr=1.0, baseline_installs=10)
    pub = Publisher("p0", floor_price=0.0001, landscape_a=1.0, request_rate=rate, pctr={"c0": 1.0})
    sim = SimConfig(horizon_minutes=horizon, delay=DelayModel("point", point_minutes=0), seed=4)
    return Scenario(publishers=(pub,), campaigns=(camp,), sim=sim, seed=4)


def test_scenario_is_deterministic_and_round_trips(tmp_path):
    a, b = generate_scenario(SMALL, 7), generate_scenario(SMALL, 7)
    assert a.dumps() == b.dumps()
    assert generate_scenario(SMALL, 8).dumps() != a.dumps()
    a.save(tmp_path / "s.json")
    assert Scenario.load(tmp_path / "s.json").dumps() == a.dumps()
    with pytest.raises(ValueError):
        Scenario.from_dict({"format": "other", "version": 1})


def test_paper_scale_sizes():
    spec = replace(GeneratorSpec.for_scale("paper"), warmup_minutes=60)
    sc = generate_scenario(spec, 0)
    assert (len(sc.publishers), len(sc.campaigns)) == (183, 400)
    assert sc.quantizer.n_states == 48 and sc.action_space.n_actions == 112
    with pytest.raises(ValueError):
        GeneratorSpec.for_scale("huge")


def test_degenerate_ranges_rejected():
    with pytest.raises(ValueError):
        GeneratorSpec(budget=(10.0, 1.0))
    with pytest.raises(ValueError):
        GeneratorSpec(pctr=(0.1, 1.5))
    with pytest.raises(ValueError):
        GeneratorSpec(budget_headroom=0.5)


def test_identical_publishers():
    spec = replace(SMALL, floor_price=(0.001, 0.001), landscape_a=(2.0, 2.0), request_rate=(5.0, 5.0),
                   publisher_ctr_factor=(1.0, 1.0), pctr_pair_sigma=0.0)
    sc = generate_scenario(spec, 1)
    first = sc.publishers[0]
    assert all((p.floor_price, p.landscape_a, p.request_rate, dict(p.pctr)) ==
               (first.floor_price, first.landscape_a, first.request_rate, dict(first.pctr)) for p in sc.publishers)


def test_budgets_follow_warmup():
    sc = generate_scenario(SMALL, 2)
    assert all(c.budget > 0 for c in sc.campaigns)
    assert any(c.baseline_installs >= SMALL.min_installs for c in sc.campaigns)


def test_zero_episodes_gives_zero_table(small):
    t = train(small, 0.5, 0)
    assert not t.values.any() and not t.visits.any()


def test_training_is_deterministic(small):
    a, b = train(small, 0.3, 2), train(small, 0.3, 2)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.visits, b.visits)
    assert a.visits.sum() > 0


def test_self_comparison_is_zero(small):
    report, _, _ = evaluate(small, "baseline")
    assert report.deltas == {k: 0.0 for k in report.deltas}


def test_noop_policy_is_plain_ecpm_bidding(small):
    _, sim, _ = evaluate(small, "noop")
    plain = small.simulator((2, 0)).run()
    assert sim.ledger.aggregates() == plain.ledger.aggregates()


def test_evaluate_rejects_wrong_shape(small):
    with pytest.raises(ValueError):
        evaluate(small, QTable(5, 5))
    with pytest.raises(ValueError):
        evaluate(small, np.zeros(7, dtype=int))


def test_frozen_policy_does_not_touch_table(small):
    t = train(small, 0.5, 1)
    before = t.values.copy()
    evaluate(small, t)
    assert np.array_equal(before, t.values)


def test_delta_pct():
    assert delta_pct(110.0, 100.0) == pytest.approx(10.0)
    assert delta_pct(-1.0, -2.0) == pytest.approx(50.0)
    assert delta_pct(0.0, 0.0) == 0.0
    assert delta_pct(1.0, 0.0) == math.inf


def test_sweep_rows_and_csv_round_trip(small, tmp_path):
    reports = sweep_lambda(small, [0.0, 0.5, 1.0], 1)
    assert [r.lam for r in reports] == [0.0, 0.5, 1.0]
    write_sweep(tmp_path / "s.csv", reports)
    back = read_sweep(tmp_path / "s.csv")
    assert [(r.lam, r.seed, r.deltas) for r in back] == [(r.lam, r.seed, r.deltas) for r in reports]
    write_curve(tmp_path / "c.csv", reports)
    curve = read_rows(tmp_path / "c.csv", "rtbq-curve")
    assert [row["lambda"] for row in curve] == [0.0, 0.5, 1.0]
    with pytest.raises(ValueError):
        read_rows(tmp_path / "c.csv", "rtbq-sweep")
    write_report(tmp_path / "r.csv", reports[0])
    rows = read_rows(tmp_path / "r.csv", "rtbq-report")
    assert {row["run"] for row in rows} == {"policy", "baseline"}


def test_default_grid_has_eleven_points():
    assert DEFAULT_LAMBDAS == (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def test_summarize_mean_and_se():
    mk = lambda lam, h: RunReport(lam, 0, {}, {}, {"spend": 0.0, "margin": 0.0, "budget_util": 0.0, "happy": h})
    rows = summarize([mk(0.0, 1.0), mk(0.0, 3.0), mk(1.0, 5.0)])
    assert rows[0]["mean_delta_happy_pct"] == 2.0
    assert rows[0]["se_delta_happy_pct"] == pytest.approx(math.sqrt(2.0) / math.sqrt(2.0))
    assert rows[1]["se_delta_happy_pct"] == 0.0


def test_two_epoch_margin_rewards_by_hand():
    sc = micro(horizon=180)
    space = sc.action_space
    up = space.encode((space.a_m - 1, space.noop.eta_idx))
    table = QTable(sc.quantizer.n_states, space.n_actions)
    table.values[:, up] = 1e6  # the sampler always picks the bid-raising action
    ctl = QLearningController(sc.quantizer, space, table, RewardConfig(0.0), ExplorationSchedule(), np.random.default_rng(0))
    sim = sc.simulator((9,), record_events=True)
    snaps = []
    for _ in range(3):
        led = sim.ledger
        snaps.append((int(led.pub_cost[0]), int(led.pub_spend[0])))
        sim.run_epoch(ctl)
    ctl.close_transitions(sim)
    led = sim.ledger
    snaps.append((int(led.pub_cost[0]), int(led.pub_spend[0])))
    # hour 0 runs at base prices, hours 1 and 2 at the raised bid
    m = [(c - s) / s for c, s in snaps[1:]]
    assert ctl.rewards == pytest.approx([m[1] - m[0], m[2] - m[1]], abs=1e-15)
    assert ctl.rewards[0] < 0  # a higher bid clears higher, squeezing margin


def _final_margin(sc, action):
    qc, space = sc.quantizer, sc.action_space
    sim = sc.simulator((2, 0)).run(PolicyController(qc, space, np.full(qc.n_states, action)))
    return sim.metrics()["margin"]


def test_micro_scenario_matches_brute_force():
    sc = micro()
    qc, space = sc.quantizer, sc.action_space
    scores = [_final_margin(sc, a) for a in range(space.n_actions)]
    best = int(np.argmax(scores))
    assert space.decode(best) == (0, space.a_eta - 1)
    cfg = TrainConfig(exploration=ExplorationSchedule(1e-3, 1.0, 1e-3), alpha=0.5)
    table = train(sc, 0.0, 40, cfg)
    visited = np.flatnonzero(table.visits.sum(axis=1) > 0)
    policy = extract_policy(table)
    hits = [space.decode(int(policy[s])).eta_idx == space.a_eta - 1 for s in visited]
    assert len(visited) and all(hits)
