"""Joint loss/energy selection over the candidate set, and the lambda_E sweep."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from .energy import activations_for, algorithm_step_energy, sensors_energy
from .types import ConfigurationError, ModelConfiguration, SystemProfile


@dataclass(frozen=True)
class JointWeights:
    lambda_e: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lambda_e <= 1.0:
            raise ValueError(f"lambda_e must lie in [0, 1], got {self.lambda_e}")


@dataclass(frozen=True)
class OptimizerParams:
    lambda_e: float = 0.0
    normalize: bool = False
    horizon_steps: int = 1


@dataclass(frozen=True)
class ParetoPoint:
    lambda_e: float
    gate: str
    avg_loss: float
    avg_energy_j: float
    avg_latency_s: float


def joint_loss(loss: float, energy_j: float, weights: JointWeights | float) -> float:
    lam = weights.lambda_e if isinstance(weights, JointWeights) else weights
    return loss * (1.0 - lam) + energy_j * lam


def _minmax(values: dict) -> dict:
    lo, hi = min(values.values()), max(values.values())
    if hi == lo:
        return {k: 0.0 for k in values}
    return {k: (v - lo) / (hi - lo) for k, v in values.items()}


def select_config(
    candidates: Sequence[str],
    estimates: Mapping[str, float],
    expected_energy: Mapping[str, float],
    weights: JointWeights | float,
    normalize: bool = False,
) -> str:
    """Candidate id with the lowest joint loss.

    Ties go to the lower expected energy, then the lexicographically smaller
    id. With ``normalize`` both objectives are min-max scaled over the
    candidates first.
    """
    if not candidates:
        raise ValueError("empty candidate set")
    for cid in candidates:
        if cid not in estimates:
            raise ConfigurationError(f"no loss estimate for configuration {cid!r}")
        if cid not in expected_energy:
            raise ConfigurationError(f"no expected energy for configuration {cid!r}")
    loss = {c: estimates[c] for c in candidates}
    energy = {c: expected_energy[c] for c in candidates}
    if normalize:
        loss, energy_n = _minmax(loss), _minmax(energy)
    else:
        energy_n = energy
    return min(candidates, key=lambda c: (joint_loss(loss[c], energy_n[c], weights), energy[c], c))


def expected_config_energy(config: ModelConfiguration, profile: SystemProfile, horizon_steps: int = 1) -> float:
    """Per-step system energy if ``config`` ran for ``horizon_steps`` steps with unused sensors gated."""
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be >= 1")
    ov = profile.overrides.get(config.id)
    if ov is not None and ov.system_energy_j is not None:
        return ov.system_energy_j
    acts = activations_for(profile, config)
    per_step = sensors_energy(profile, acts) + algorithm_step_energy(config, profile)[0]
    # powers are stationary, so every step of the horizon costs the same
    total = sum(per_step for _ in range(horizon_steps))
    return total / horizon_steps


def expected_energy_map(profile: SystemProfile, horizon_steps: int | None = None) -> dict:
    h = horizon_steps or (profile.optimizer.horizon_steps if profile.optimizer else 1)
    return {c.id: expected_config_energy(c, profile, h) for c in profile.config_list}


def pareto_sweep(
    trace,
    profile: SystemProfile,
    gate,
    lambdas: Sequence[float],
    gamma: float | None = None,
    t_c: int = 30,
    seed: int = 0,
    workers: int = 1,
) -> list:
    """One :class:`ParetoPoint` per lambda, each from an independent run with the same seed."""
    from .runtime import run_trace

    lambdas = list(lambdas)
    if not lambdas:
        raise ValueError("lambdas must be non-empty")
    for lam in lambdas:
        JointWeights(lam)

    def one(lam):
        _, summary = run_trace(trace, profile, gate, JointWeights(lam), gamma=gamma, t_c=t_c, seed=seed)
        return ParetoPoint(lam, str(getattr(gate, "value", gate)), summary["avg_loss"], summary["avg_energy_j"], summary["avg_latency_s"])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, lambdas))
    return [one(lam) for lam in lambdas]
