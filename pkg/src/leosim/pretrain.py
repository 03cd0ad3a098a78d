"""Offline exploration: epsilon-greedy episodes over randomized input rates
and constellation phases, training the shared Q-agent until the step budget
is consumed.

The trained checkpoint is then used unchanged by both the pure-RL policy
(greedy exploitation) and the hybrid policy (fallback decisions).
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .config import EPISODE_SEED_OFFSET, ScenarioConfig
from .dql import QAgent
from .engine import Simulation, make_agent

MAX_EPISODES = 100_000


def pretrain(scenario: ScenarioConfig, budget: int | None = None,
             agent: QAgent | None = None, log=None) -> tuple[QAgent, dict]:
    """Train a fresh agent for `budget` decision steps; returns the agent and
    summary stats (episodes, steps, updates, final epsilon, reward means)."""
    budget = scenario.agent.pretrain_steps if budget is None else budget
    if budget < 1:
        raise ValueError("pretrain: step budget must be >= 1")
    if agent is None:
        agent = make_agent(scenario)

    eng = scenario.engine
    episode_engine = replace(
        eng, t_sim_s=eng.episode_length_s, warmup_s=0.0, trace_log=False)
    period = scenario.constellation.period_s

    episode_rewards = []
    episodes = 0
    while agent.steps < budget:
        if episodes >= MAX_EPISODES:
            raise RuntimeError("pretrain: step budget unreachable (no decisions occur)")
        ep_seed = scenario.run.master_seed + EPISODE_SEED_OFFSET + episodes
        ep_rng = np.random.default_rng(ep_seed)
        eta = float(ep_rng.uniform(eng.pretrain_eta_min, eng.pretrain_eta_max))
        phase = float(ep_rng.uniform(0.0, period))
        ep_scenario = replace(
            scenario,
            constellation=replace(scenario.constellation, epoch_s=phase),
            engine=episode_engine,
        )
        sim = Simulation(ep_scenario, "rl-train", eta, ep_seed,
                         agent=agent, step_budget=budget)
        sim.run()
        if sim.train_reward_n:
            episode_rewards.append(sim.train_reward_sum / sim.train_reward_n)
        episodes += 1
        if log is not None:
            log(f"episode {episodes}: eta={eta:.2f} steps={agent.steps}/{budget} "
                f"epsilon={agent.epsilon:.3f}")

    stats = {
        "episodes": episodes,
        "steps": agent.steps,
        "updates": agent.updates,
        "final_epsilon": agent.epsilon,
        "mean_episode_reward": float(np.mean(episode_rewards)) if episode_rewards else float("nan"),
        "last_episode_reward": episode_rewards[-1] if episode_rewards else float("nan"),
    }
    return agent, stats
