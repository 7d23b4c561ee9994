"""Evaluate agents against the greedy baseline over an environment suite."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from . import env as E
from .baseline import EpisodeResult, greedy_action, run_episode
from .errors import UndefinedMetricError
from .nn import QNetwork
from .qlearn import policy_of

Agent = Union[QNetwork, Callable[[E.EnvState], int]]


def run_agent_episode(agent: Agent, config: E.EnvConfig, seed: Optional[int] = None) -> EpisodeResult:
    """One episode driven by ``agent`` (a Q-network or any ``state -> user`` callable)."""
    if isinstance(agent, QNetwork):
        if agent.architecture.output_dim != config.n_users or agent.architecture.input_dim != config.state_dim:
            raise ValueError(
                f"network shape {agent.architecture.input_dim}->{agent.architecture.output_dim} does not "
                f"match environment ({config.state_dim} inputs, {config.n_users} users)"
            )
        agent = policy_of(agent)
    return run_episode(config, agent, seed)


def advantage(greedy_reward: float, agent_reward: float, rounding: str = "truncate") -> int:
    """Percent improvement of the agent over greedy: ``100 * (agent - greedy) / |agent|``.

    ``rounding="truncate"`` drops the fractional part (toward zero), which
    matches two-digit reference values computed from integer totals; ``"nearest"``
    rounds half away from zero.
    """
    if agent_reward == 0:
        raise UndefinedMetricError("advantage is undefined when the agent reward is 0")
    pct = 100.0 * (agent_reward - greedy_reward) / abs(agent_reward)
    # absorb representation error so e.g. 46.99999999 truncates to 47
    pct_r = round(pct, 9)
    if rounding == "truncate":
        return int(math.trunc(pct_r))
    if rounding == "nearest":
        return int(math.copysign(math.floor(abs(pct_r) + 0.5), pct_r))
    raise ValueError(f"unknown rounding {rounding!r}")


@dataclass
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["grid", "density"])
        for x, d in zip(self.grid, self.density):
            w.writerow([repr(float(x)), repr(float(d))])
        return buf.getvalue()


MIN_BANDWIDTH = 1e-6


def silverman_bandwidth(x: np.ndarray) -> float:
    """``0.9 * min(std, IQR/1.34) * n**(-1/5)``, floored for degenerate data.

    When one of std or IQR/1.34 is zero the other is used.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    std = float(np.std(x, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25) / 1.34
    spread = min(std, iqr) if std > 0 and iqr > 0 else max(std, iqr)
    scale = max(1.0, float(np.max(np.abs(x))))
    return max(0.9 * spread * n ** (-0.2), MIN_BANDWIDTH * scale)


def kde(samples, grid_points: int = 512, bandwidth: Optional[float] = None) -> KdeCurve:
    """Gaussian KDE on a grid spanning the data range plus four bandwidths each side."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("kde needs at least one sample")
    if grid_points < 2:
        raise ValueError(f"grid_points must be >= 2, got {grid_points}")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    grid = np.linspace(x.min() - 4 * h, x.max() + 4 * h, grid_points)
    density = kde_density(x, grid, h)
    return KdeCurve(grid, density, h)


def kde_density(samples: np.ndarray, points: np.ndarray, h: float) -> np.ndarray:
    u = (np.asarray(points)[:, None] - np.asarray(samples)[None, :]) / h
    return np.exp(-0.5 * u * u).sum(axis=1) / (len(samples) * h * math.sqrt(2 * math.pi))


# -- reports ---------------------------------------------------------------------


@dataclass
class EnvRow:
    env_id: int
    greedy_mean: float
    agent_means: list
    best_agent: int
    best_agent_mean: float
    advantage_pct: Optional[int]
    best_single_episode: float
    greedy_episodes: list = field(default_factory=list)
    agent_episodes: list = field(default_factory=list)  # per agent, list of EpisodeResult

    def to_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "greedy_mean": self.greedy_mean,
            "agent_means": list(self.agent_means),
            "best_agent": self.best_agent,
            "best_agent_mean": self.best_agent_mean,
            "advantage_pct": self.advantage_pct,
            "best_single_episode": self.best_single_episode,
            "greedy_episodes": [e.to_dict() for e in self.greedy_episodes],
            "agent_episodes": [[e.to_dict() for e in eps] for eps in self.agent_episodes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvRow":
        return cls(
            env_id=d["env_id"],
            greedy_mean=d["greedy_mean"],
            agent_means=d["agent_means"],
            best_agent=d["best_agent"],
            best_agent_mean=d["best_agent_mean"],
            advantage_pct=d["advantage_pct"],
            best_single_episode=d["best_single_episode"],
            greedy_episodes=[EpisodeResult.from_dict(e) for e in d["greedy_episodes"]],
            agent_episodes=[[EpisodeResult.from_dict(e) for e in eps] for eps in d["agent_episodes"]],
        )


@dataclass
class EvalReport:
    rows: list
    episodes_per_eval: int
    seed: int

    def check_sums(self) -> None:
        """Means must be the averages of the stored episode totals."""
        for row in self.rows:
            assert row.greedy_mean == _mean_total(row.greedy_episodes), row.env_id
            for m, eps in zip(row.agent_means, row.agent_episodes):
                assert m == _mean_total(eps), row.env_id

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["env_id", "greedy_result", "best_agent_result", "advantage_pct", "best_agent", "best_single_episode"])
        for r in self.rows:
            adv = "" if r.advantage_pct is None else f"{r.advantage_pct:+d}"
            w.writerow([r.env_id, f"{r.greedy_mean:.6f}", f"{r.best_agent_mean:.6f}", adv, r.best_agent,
                        f"{r.best_single_episode:.6f}"])
        return buf.getvalue()

    def agents_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["env_id", "agent", "mean_total_reward"])
        for r in self.rows:
            for i, m in enumerate(r.agent_means):
                w.writerow([r.env_id, i, repr(float(m))])
        return buf.getvalue()

    def kde_curves(self, grid_points: int = 256) -> dict:
        """Per-env KDE of the agents' mean total rewards."""
        return {r.env_id: kde(r.agent_means, grid_points) for r in self.rows}

    def advantage_kde(self, grid_points: int = 256) -> Optional[KdeCurve]:
        adv = [r.advantage_pct for r in self.rows if r.advantage_pct is not None]
        return kde(adv, grid_points) if adv else None

    def to_dict(self) -> dict:
        return {
            "episodes_per_eval": self.episodes_per_eval,
            "seed": self.seed,
            "rows": [r.to_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls([EnvRow.from_dict(r) for r in d["rows"]], d["episodes_per_eval"], d["seed"])


def _mean_total(episodes: Sequence[EpisodeResult]) -> float:
    return math.fsum(e.total_reward for e in episodes) / len(episodes)


def episode_seeds(env_index: int, episodes: int, seed: int) -> list:
    """Evaluation seeds, shared by greedy and every agent on the same env."""
    return [seed + env_index * episodes + e for e in range(episodes)]


def build_report(
    suite: Sequence[E.EnvConfig],
    agents: Union[Sequence[Agent], Mapping[int, Sequence[Agent]]],
    episodes_per_eval: int = 100,
    seed: int = 0,
    jobs: int = 1,
) -> EvalReport:
    """Greedy vs agents on every environment of ``suite``.

    ``agents`` is either one list used for every environment, or a mapping
    from environment index to that environment's agents. With ``jobs > 1``
    environments are evaluated in worker processes; results do not depend
    on ``jobs``.
    """
    if not suite:
        raise ValueError("build_report needs a nonempty suite")
    if episodes_per_eval < 1:
        raise ValueError("episodes_per_eval must be >= 1")
    tasks = []
    for i, cfg in enumerate(suite):
        env_agents = list(agents.get(i, [])) if isinstance(agents, Mapping) else list(agents)
        if not env_agents:
            raise ValueError(f"no agents for environment {i + 1}")
        tasks.append((i, cfg, env_agents, episode_seeds(i, episodes_per_eval, seed)))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_evaluate_env, tasks))
    else:
        rows = [_evaluate_env(t) for t in tasks]
    report = EvalReport(rows, episodes_per_eval, seed)
    report.check_sums()
    return report


def _evaluate_env(task) -> EnvRow:
    i, cfg, env_agents, seeds = task
    greedy_eps = [run_episode(cfg, greedy_action, s) for s in seeds]
    agent_eps = [[run_agent_episode(a, cfg, s) for s in seeds] for a in env_agents]
    greedy_mean = _mean_total(greedy_eps)
    means = [_mean_total(eps) for eps in agent_eps]
    best = int(np.argmax(means))
    try:
        adv = advantage(greedy_mean, means[best])
    except UndefinedMetricError:
        adv = None
    return EnvRow(
        env_id=i + 1,
        greedy_mean=greedy_mean,
        agent_means=means,
        best_agent=best,
        best_agent_mean=means[best],
        advantage_pct=adv,
        best_single_episode=max(e.total_reward for eps in agent_eps for e in eps),
        greedy_episodes=greedy_eps,
        agent_episodes=agent_eps,
    )


# -- SVG -------------------------------------------------------------------------


def svg_plot(series: Sequence[tuple], title: str = "", vlines: Sequence[tuple] = (),
             width: int = 480, height: int = 300, xlabel: str = "total reward", ylabel: str = "density") -> str:
    """Minimal standalone SVG line plot.

    ``series`` holds ``(label, xs, ys)`` triples; ``vlines`` holds ``(label, x)``
    markers drawn as dashed verticals.
    """
    pad_l, pad_r, pad_t, pad_b = 56, 16, 28, 40
    xs_all = [float(x) for _, xs, _ in series for x in xs] + [float(x) for _, x in vlines]
    ys_all = [float(y) for _, _, ys in series for y in ys] + [0.0]
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = 0.0, max(ys_all)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return pad_t + ph - (y - y0) / (y1 - y0) * ph

    colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<line x1="{pad_l}" y1="{pad_t + ph}" x2="{pad_l + pw}" y2="{pad_t + ph}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + ph}" stroke="black"/>',
        f'<text x="{pad_l + pw / 2:.1f}" y="{height - 6}" text-anchor="middle">{_esc(xlabel)}</text>',
        f'<text x="12" y="{pad_t + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 12 {pad_t + ph / 2:.1f})">{_esc(ylabel)}</text>',
    ]
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        out.append(f'<text x="{sx(xv):.1f}" y="{pad_t + ph + 14}" text-anchor="middle">{xv:.4g}</text>')
        yv = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{pad_l - 4}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    for i, (label, xs, ys) in enumerate(series):
        c = colors[i % len(colors)]
        pts = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{pad_l + pw - 4}" y="{pad_t + 12 + 13 * i}" text-anchor="end" fill="{c}">{_esc(label)}</text>')
    for j, (label, x) in enumerate(vlines):
        c = "#444444"
        out.append(f'<line x1="{sx(x):.2f}" y1="{pad_t}" x2="{sx(x):.2f}" y2="{pad_t + ph}" '
                   f'stroke="{c}" stroke-dasharray="4,3"/>')
        out.append(f'<text x="{sx(x) + 3:.2f}" y="{pad_t + 12 + 13 * j}" fill="{c}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def report_files(report: EvalReport, grid_points: int = 256) -> dict:
    """All derived report artifacts as ``{relative filename: text}``."""
    files = {
        "table.csv": report.table_csv(),
        "agents.csv": report.agents_csv(),
    }
    for env_id, curve in report.kde_curves(grid_points).items():
        row = report.rows[env_id - 1]
        files[f"kde/env_{env_id:02d}.csv"] = curve.to_csv()
        files[f"plots/env_{env_id:02d}.svg"] = svg_plot(
            [("agents", curve.grid, curve.density)],
            title=f"Environment {env_id}: agent mean total reward",
            vlines=[("greedy", row.greedy_mean)],
        )
    adv = report.advantage_kde(grid_points)
    if adv is not None:
        files["kde/advantage.csv"] = adv.to_csv()
        files["plots/advantage.svg"] = svg_plot(
            [("best agent vs greedy", adv.grid, adv.density)],
            title="Advantage of best agent per environment", xlabel="advantage (%)",
        )
    return files
