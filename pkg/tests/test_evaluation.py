import math

import numpy as np
import pytest

from schedq import env as E
from schedq import nn
from schedq.baseline import greedy_action, run_greedy_episode
from schedq.errors import UndefinedMetricError
from schedq.evaluation import (
    EvalReport,
    advantage,
    build_report,
    kde,
    report_files,
    run_agent_episode,
    silverman_bandwidth,
    svg_plot,
)

from conftest import static_config
from test_acceptance import TABLE_ROWS


@pytest.mark.parametrize("greedy,agent,pct", TABLE_ROWS)
def test_advantage_reference_rows(greedy, agent, pct):
    assert advantage(greedy, agent) == pct


def test_advantage_nearest_rounding_differs_on_some_rows():
    nearest = [advantage(g, a, rounding="nearest") for g, a, _ in TABLE_ROWS]
    assert sum(n != p for n, (_, _, p) in zip(nearest, TABLE_ROWS)) == 4


def test_advantage_edge_cases():
    assert advantage(-100, -100) == 0
    assert advantage(-100, -200) == -50
    with pytest.raises(UndefinedMetricError):
        advantage(-5, 0)
    with pytest.raises(ValueError):
        advantage(-5, -4, rounding="banker")


def test_kde_single_sample_closed_form():
    h = 0.5
    c = kde([2.0], grid_points=9, bandwidth=h)
    assert c.grid[4] == pytest.approx(2.0, abs=1e-15)
    assert abs(c.density[4] - 1 / (h * math.sqrt(2 * math.pi))) < 1e-12


def test_kde_integrates_to_one_and_matches_normal():
    x = np.random.default_rng(0).normal(size=1000)
    c = kde(x, grid_points=2048)
    integral = float(np.sum((c.density[1:] + c.density[:-1]) * np.diff(c.grid)) / 2)
    assert 0.99 <= integral <= 1.01
    assert abs(np.interp(0.0, c.grid, c.density) - 0.399) < 0.05


def test_kde_translation_equivariance():
    x = np.random.default_rng(1).normal(size=50)
    a, b = kde(x, 64), kde(x + 10.0, 64)
    assert a.bandwidth == pytest.approx(b.bandwidth, rel=1e-12)
    np.testing.assert_allclose(a.grid + 10.0, b.grid, rtol=0, atol=1e-9)
    np.testing.assert_allclose(a.density, b.density, rtol=1e-9)


def test_silverman_degenerate_data_is_floored():
    assert silverman_bandwidth(np.array([3.0, 3.0, 3.0])) == pytest.approx(3e-6)
    # std is nonzero, IQR is zero: std is used
    x = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
    assert silverman_bandwidth(x) == pytest.approx(0.9 * np.std(x, ddof=1) * 6 ** -0.2)


def test_kde_rejects_bad_input():
    with pytest.raises(ValueError):
        kde([])
    with pytest.raises(ValueError):
        kde([1.0], grid_points=1)


def zero_net(n):
    arch = nn.NetArchitecture(n + n * n, 1, 4, n)
    net = nn.init_network(arch, 0)
    for p in net.parameters():
        p[...] = 0
    return net


def test_zero_network_hand_trace():
    # all Q-values tie, so the agent takes the lowest eligible index every step
    cfg = static_config([1.0, 2.0, 1.0])
    r = run_agent_episode(zero_net(3), cfg)
    assert r.actions == [0, 1, 1, 2]
    assert r.rewards == [0.0, -3.0, -3.0, -12.0]
    assert r.total_reward == -18.0


def test_zero_penalties_give_zero_reward():
    cfg = static_config([2.0, 1.0, 3.0], P=np.zeros((3, 3)))
    assert run_agent_episode(zero_net(3), cfg).total_reward == 0.0


def test_agent_episode_deterministic_under_seed():
    cfg = E.generate_env_suite(3, 1)[0]
    net = nn.init_network(nn.test_profile(10), 1)
    a, b = run_agent_episode(net, cfg, seed=5), run_agent_episode(net, cfg, seed=5)
    assert a.actions == b.actions and a.rewards == b.rewards


def test_agent_shape_mismatch():
    with pytest.raises(ValueError, match="does not match"):
        run_agent_episode(zero_net(4), static_config([1.0, 1.0, 1.0]))


@pytest.fixture(scope="module")
def suite():
    return E.generate_env_suite(11, 2)


def test_greedy_stub_report_has_zero_advantage(suite):
    rep = build_report(suite, [greedy_action], episodes_per_eval=4, seed=1)
    assert [r.advantage_pct for r in rep.rows] == [0, 0]
    for r in rep.rows:
        assert r.greedy_mean == r.best_agent_mean
        assert r.greedy_mean == pytest.approx(
            np.mean([run_greedy_episode(suite[r.env_id - 1], s).total_reward for s in range(1 + (r.env_id - 1) * 4, 1 + r.env_id * 4)])
        )


def test_single_env_single_agent_one_row(suite):
    rep = build_report(suite[:1], {0: [zero_net(10)]}, episodes_per_eval=3)
    assert len(rep.rows) == 1
    row = rep.rows[0]
    assert row.env_id == 1 and row.best_agent == 0 and len(row.agent_means) == 1
    assert len(row.greedy_episodes) == 3
    rep.check_sums()


def test_report_independent_of_jobs(suite):
    agents = [greedy_action, zero_net(10)]
    a = build_report(suite, agents, episodes_per_eval=3, seed=2)
    b = build_report(suite, agents, episodes_per_eval=3, seed=2, jobs=2)
    assert a.to_json() == b.to_json()


def test_report_round_trip_and_files(suite):
    rep = build_report(suite, [greedy_action, zero_net(10)], episodes_per_eval=3)
    again = EvalReport.from_dict(rep.to_dict())
    assert again.to_json() == rep.to_json()
    files = report_files(rep, grid_points=32)
    assert set(files) == {
        "table.csv", "agents.csv", "kde/env_01.csv", "kde/env_02.csv", "kde/advantage.csv",
        "plots/env_01.svg", "plots/env_02.svg", "plots/advantage.svg",
    }
    table = files["table.csv"].splitlines()
    assert table[0].startswith("env_id,greedy_result,best_agent_result,advantage_pct")
    assert len(table) == 3
    assert len(files["kde/env_01.csv"].splitlines()) == 33
    assert len(files["agents.csv"].splitlines()) == 1 + 2 * 2


def test_report_validation(suite):
    with pytest.raises(ValueError):
        build_report([], [greedy_action])
    with pytest.raises(ValueError):
        build_report(suite, {0: [greedy_action]})
    with pytest.raises(ValueError):
        build_report(suite, [greedy_action], episodes_per_eval=0)


def test_svg_plot_is_wellformed():
    import xml.etree.ElementTree as ET

    svg = svg_plot([("a<b", [0, 1, 2], [0, 1, 0])], title="t & u", vlines=[("g", 1.5)])
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert "a&lt;b" in svg and "t &amp; u" in svg
