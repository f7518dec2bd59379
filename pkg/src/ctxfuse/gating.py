"""Per-configuration loss estimates and the gamma-margin candidate filter.

Three gates ship: a rule table keyed by context (``knowledge``), a
per-context moving average seeded with offline priors (``estimator``), and
a ground-truth upper bound (``oracle``).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .types import DEFAULT_CONTEXT_KEY, ConfigurationError, SystemProfile

SENTINEL_LOSS = 1e6

GateEstimate = dict  # configuration id -> estimated loss


class GateKind(str, enum.Enum):
    KNOWLEDGE = "knowledge"
    ESTIMATOR = "estimator"
    ORACLE = "oracle"


@dataclass
class GateParams:
    gamma: float = 0.1
    alpha: float = 0.3
    misclassification_prob: float = 0.0
    rules: dict = field(default_factory=dict)
    priors: dict = field(default_factory=dict)  # config id -> {context: loss}

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigurationError("gamma must be >= 0")
        if not 0 < self.alpha <= 1:
            raise ConfigurationError("alpha must lie in (0, 1]")
        if not 0 <= self.misclassification_prob <= 1:
            raise ConfigurationError("misclassification_prob must lie in [0, 1]")


def knowledge_gate(context: str, rules: Mapping[str, Iterable[str]], config_ids: Iterable[str]) -> GateEstimate:
    """0 for the configurations the rule table prefers in ``context``, sentinel otherwise."""
    if not rules:
        raise ConfigurationError("knowledge gate: empty rule table")
    if context in rules:
        preferred = set(rules[context])
    elif DEFAULT_CONTEXT_KEY in rules:
        preferred = set(rules[DEFAULT_CONTEXT_KEY])
    else:
        raise ConfigurationError(f"knowledge gate: no rule for context {context!r} and no default")
    ids = list(config_ids)
    unknown = preferred - set(ids)
    if unknown:
        raise ConfigurationError(f"knowledge gate: rule names unknown configuration {sorted(unknown)[0]!r}")
    return {cid: 0.0 if cid in preferred else SENTINEL_LOSS for cid in ids}


def oracle_gate(true_losses: Mapping[str, float], config_ids: Iterable[str] | None = None) -> GateEstimate:
    """Ground-truth losses passed through unchanged."""
    if config_ids is not None:
        missing = [c for c in config_ids if c not in true_losses]
        if missing:
            raise ConfigurationError(f"oracle gate: no true loss for configuration {missing[0]!r}")
    return dict(true_losses)


def config_prior(profile: SystemProfile, config_id: str, context: str) -> float:
    """Offline loss prior for a configuration in a context.

    Uses the profile's calibrated table when present, else the best member
    branch's ``loss_profile`` entry.
    """
    table = profile.gate.priors.get(config_id) if profile.gate is not None else None
    if table:
        if context in table:
            return table[context]
        if DEFAULT_CONTEXT_KEY in table:
            return table[DEFAULT_CONTEXT_KEY]
    config = profile.config(config_id)
    return min(profile.branch_map[b].expected_loss(context) for b in config.branches)


class EstimatorState:
    """Per-context exponential moving average over observed configuration losses."""

    def __init__(self, profile: SystemProfile, alpha: float = 0.3):
        self.profile = profile
        self.alpha = alpha
        self.config_ids = [c.id for c in profile.config_list]
        self._est: dict = {}

    def _table(self, context: str) -> dict:
        tab = self._est.get(context)
        if tab is None:
            tab = {cid: config_prior(self.profile, cid, context) for cid in self.config_ids}
            self._est[context] = tab
        return tab

    def estimate(self, context: str) -> GateEstimate:
        return dict(self._table(context))

    def observe(self, context: str, config_id: str, loss: float) -> float:
        tab = self._table(context)
        tab[config_id] = (1.0 - self.alpha) * tab[config_id] + self.alpha * loss
        return tab[config_id]


def infer_context(context: str, known: list, misclassification_prob: float, rng: np.random.Generator) -> str:
    """Declared context, swapped for another known one with the given probability."""
    if misclassification_prob <= 0 or len(known) < 2:
        return context
    if rng.random() < misclassification_prob:
        others = [c for c in known if c != context]
        return others[int(rng.integers(len(others)))]
    return context


def estimator_gate(context: str, state: EstimatorState) -> GateEstimate:
    return state.estimate(context)


def select_candidates(estimates: Mapping[str, float], gamma: float) -> list:
    """Configuration ids whose estimate is within ``gamma`` of the best, sorted."""
    if not estimates:
        raise ValueError("no estimates to select from")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    best = min(estimates.values())
    limit = best + gamma if not math.isinf(gamma) else math.inf
    return sorted(cid for cid, v in estimates.items() if v <= limit)


# --- gate objects used by the controller -------------------------------------


class KnowledgeGate:
    kind = GateKind.KNOWLEDGE

    def __init__(self, profile: SystemProfile, rules: Mapping | None = None):
        self.rules = dict(profile.gate.rules if rules is None else rules)
        self.config_ids = [c.id for c in profile.config_list]
        if not self.rules:
            raise ConfigurationError("knowledge gate: empty rule table")

    def estimate(self, context: str, true_losses: Callable[[], Mapping[str, float]]) -> GateEstimate:
        return knowledge_gate(context, self.rules, self.config_ids)

    def observe(self, context, config_id, loss):
        pass


class EstimatorGate:
    kind = GateKind.ESTIMATOR

    def __init__(self, profile: SystemProfile, seed: int = 0):
        p = profile.gate
        self.state = EstimatorState(profile, p.alpha)
        self.misclassification_prob = p.misclassification_prob
        ctxs = set()
        for b in profile.branches:
            ctxs.update(k for k in b.loss_profile if k != DEFAULT_CONTEXT_KEY)
        for tab in p.priors.values():
            ctxs.update(k for k in tab if k != DEFAULT_CONTEXT_KEY)
        self.known_contexts = sorted(ctxs)
        self.rng = np.random.default_rng(seed)
        self.inferred = None
        self._pending: dict = {}

    def estimate(self, context: str, true_losses) -> GateEstimate:
        self.flush()
        self.inferred = infer_context(context, self.known_contexts, self.misclassification_prob, self.rng)
        return estimator_gate(self.inferred, self.state)

    def observe(self, context, config_id, loss):
        # attributed to the context the gate believed in; applied as one
        # averaged update per re-identification interval
        key = (self.inferred if self.inferred is not None else context, config_id)
        self._pending.setdefault(key, []).append(loss)

    def flush(self):
        for (ctx, cid), losses in sorted(self._pending.items()):
            self.state.observe(ctx, cid, sum(losses) / len(losses))
        self._pending.clear()


class OracleGate:
    kind = GateKind.ORACLE

    def __init__(self, profile: SystemProfile):
        self.config_ids = [c.id for c in profile.config_list]

    def estimate(self, context: str, true_losses) -> GateEstimate:
        return oracle_gate(true_losses(), self.config_ids)

    def observe(self, context, config_id, loss):
        pass


def make_gate(kind, profile: SystemProfile, seed: int = 0):
    kind = GateKind(kind)
    if kind is GateKind.KNOWLEDGE:
        return KnowledgeGate(profile)
    if kind is GateKind.ESTIMATOR:
        return EstimatorGate(profile, seed)
    return OracleGate(profile)
