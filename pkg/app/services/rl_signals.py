"""
rl_signals.py - Reward / advantage / clipped-objective math for text policies

Provides:
- similarity(a, b) - normalized token-level Levenshtein similarity in [0, 1]
- reward(answer, target) - exact match after trim + casefold
- reinforcepp_signals(...) -> RlSignals
- grpo_signals(...) -> GroupSignals
"""

import math

import numpy as np

from app.models.optimizer import GroupSignals, OptimizerConfig, RlSignals
from app.services.errors import EmptyCandidateSet


def _tokens(text: str) -> list[str]:
    return text.casefold().split()


def _edit_distance(a: list[str], b: list[str]) -> int:
    previous = list(range(len(b) + 1))
    for i, token_a in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, token_b in enumerate(b, start=1):
            current[j] = min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (token_a != token_b),
            )
        previous = current
    return previous[-1]


def similarity(a: str, b: str) -> float:
    ta, tb = _tokens(a), _tokens(b)
    return 1.0 - _edit_distance(ta, tb) / max(len(ta), len(tb), 1)


def reward(answer: str, target: str) -> float:
    return 1.0 if answer.strip().casefold() == target.strip().casefold() else 0.0


def clipped_objective(ratio: float, advantage: float, epsilon: float) -> tuple[float, float]:
    """Symmetric clip: (clipped ratio, min(ratio * A, clip(ratio) * A))."""
    clipped = float(np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon))
    return clipped, min(ratio * advantage, clipped * advantage)


def reinforcepp_signals(
    answer: str,
    previous: str,
    target: str,
    reference: str,
    config: OptimizerConfig,
) -> RlSignals:
    r = reward(answer, target)
    ratio = similarity(previous, answer)
    penalty = config.beta * abs(math.log(max(similarity(reference, answer), config.epsilon0)))
    advantage = r - penalty
    _, objective = clipped_objective(ratio, advantage, config.epsilon)
    return RlSignals(reward=r, advantage=advantage, objective=objective, ratio=ratio, penalty=penalty)


def group_advantages(rewards: list[float]) -> tuple[np.ndarray, float, float]:
    """(advantages, mean, population std); all-zero advantages for a degenerate group."""
    values = np.asarray(rewards, dtype=np.float64)
    mean = float(values.mean())
    std = float(values.std())
    if std == 0.0:
        return np.zeros_like(values), mean, std
    return (values - mean) / std, mean, std


def asymmetric_clip(ratio: float, advantage: float, epsilon: float) -> tuple[float, float]:
    """Upper clip for non-negative advantages, lower clip for negative ones."""
    clipped = min(ratio, 1.0 + epsilon) if advantage >= 0 else max(ratio, 1.0 - epsilon)
    return clipped, min(ratio * advantage, clipped * advantage)


def grpo_signals(
    candidates: list[str],
    target: str,
    previous: str,
    config: OptimizerConfig,
) -> GroupSignals:
    if not candidates:
        raise EmptyCandidateSet("GRPO needs at least one candidate")
    rewards = [reward(y, target) for y in candidates]
    advantages, mean, std = group_advantages(rewards)
    ratios = [similarity(previous, y) for y in candidates]
    objectives = [asymmetric_clip(ratio, float(a), config.epsilon)[1] for ratio, a in zip(ratios, advantages)]
    return GroupSignals(
        rewards=rewards,
        advantages=[float(a) for a in advantages],
        objectives=objectives,
        ratios=ratios,
        mean_reward=mean,
        std_reward=std,
    )
