"""2-D continuous toy environment with a start region, a terminal danger zone
and a goal zone, plus random-policy dataset collection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset

STATE_DIM = 2
ACTION_DIM = 2
ACTION_BOUND = 0.5
STATE_BOUND = 1.5
EPISODE_LIMIT = 300

REWARD_DANGER = -3.0
REWARD_GOAL = 1.0


def in_danger(xy) -> np.ndarray:
    """D2: disc of radius 0.5 around the origin (terminal, reward -3)."""
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    return xy[:, 0] ** 2 + xy[:, 1] ** 2 <= 0.25


def in_goal(xy) -> np.ndarray:
    """D3: disc of radius 0.8 around (1.5, 1.5), open at x=1.5 / y=1.5."""
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    d2 = (xy[:, 0] - 1.5) ** 2 + (xy[:, 1] - 1.5) ** 2
    return (d2 <= 0.64) & (xy[:, 0] < 1.5) & (xy[:, 1] < 1.5)


def in_start(xy) -> np.ndarray:
    """D1: quarter disc of radius 1 around (-1.5, -1.5) with x<0, y<0."""
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    d2 = (xy[:, 0] + 1.5) ** 2 + (xy[:, 1] + 1.5) ** 2
    return (d2 <= 1.0) & (xy[:, 0] < 0.0) & (xy[:, 1] < 0.0)


def outside_legal(xy) -> np.ndarray:
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    return (np.abs(xy[:, 0]) > STATE_BOUND) | (np.abs(xy[:, 1]) > STATE_BOUND)


def reward_for_state(xy) -> np.ndarray:
    """Region reward of the state; the danger test takes precedence."""
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    r = np.zeros(xy.shape[0])
    danger = in_danger(xy)
    r[danger] = REWARD_DANGER
    r[~danger & in_goal(xy)] = REWARD_GOAL
    return r


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    done: bool


class RiskWorld:
    """Displacement dynamics s' = clamp(s + a) on the legal square."""

    state_dim = STATE_DIM
    action_dim = ACTION_DIM
    action_bound = ACTION_BOUND
    episode_limit = EPISODE_LIMIT

    def reset(self, rng) -> np.ndarray:
        # rejection-sample the uniform start distribution on the quarter disc
        while True:
            p = rng.uniform(-1.5, -0.5, size=2)
            if in_start(p)[0]:
                return p

    def step(self, state, action) -> StepResult:
        state = np.asarray(state, dtype=np.float64)
        action = np.clip(np.asarray(action, dtype=np.float64),
                         -ACTION_BOUND, ACTION_BOUND)
        nxt = np.clip(state + action, -STATE_BOUND, STATE_BOUND)
        danger = bool(in_danger(nxt)[0])
        reward = float(reward_for_state(nxt)[0])
        return StepResult(state=nxt, reward=reward, done=danger)


def collect_random(steps: int, rng) -> Dataset:
    """Log `steps` transitions from a uniformly random policy.

    Episodes end on entering the danger zone or after the 300-step limit and
    re-reset until the step budget is exhausted.
    """
    if steps <= 0:
        raise ValueError("steps must be positive")
    env = RiskWorld()
    s = np.empty((steps, STATE_DIM))
    a = np.empty((steps, ACTION_DIM))
    r = np.empty(steps)
    s2 = np.empty((steps, STATE_DIM))
    done = np.empty(steps)

    state = env.reset(rng)
    ep_len = 0
    for t in range(steps):
        action = rng.uniform(-ACTION_BOUND, ACTION_BOUND, size=ACTION_DIM)
        res = env.step(state, action)
        ep_len += 1
        s[t] = state
        a[t] = action
        r[t] = res.reward
        s2[t] = res.state
        done[t] = float(res.done)
        if res.done or ep_len >= EPISODE_LIMIT:
            state = env.reset(rng)
            ep_len = 0
        else:
            state = res.state
    return Dataset.from_arrays("riskworld", s, a, r, s2, done)
