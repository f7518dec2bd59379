"""Simulation controller: fusion steps, intermittent context-ID steps, clock gating."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

from .energy import (
    EnergyLedger,
    SensorState,
    activations_for,
    algorithm_step_energy,
    context_id_overhead_j,
    sensors_energy,
)
from .fusion import FusionParams, LossParams
from .gating import SENTINEL_LOSS, GateKind, make_gate, select_candidates
from .optimizer import JointWeights, expected_energy_map, select_config
from .reporting import write_csv
from .scenario import SimulationTrace, TraceStep, branch_detections, check_trace_contexts, true_config_losses
from .types import ConfigurationError, ModelConfiguration, SystemProfile

FUSION = "fusion"
CONTEXT_ID = "context_id"
STEP_COLUMNS = ("t", "mode", "context", "config_id", "sensor_j", "algo_j", "switch_j", "energy_j", "loss", "latency_s")


class ConstantInterval:
    """Re-identify context every ``t_c`` steps."""

    def __init__(self, t_c: int):
        if int(t_c) < 1:
            raise ValueError("t_c must be >= 1")
        self.t_c = int(t_c)

    def __call__(self, t: int, record: "StepRecord") -> int:
        return self.t_c


@dataclass
class StepRecord:
    t: int
    mode: str
    context: str
    config_id: str
    loss: float
    sensor_j: float
    algo_j: float
    switch_j: float
    latency_s: float

    @property
    def energy_j(self) -> float:
        return self.sensor_j + self.algo_j + self.switch_j

    def row(self) -> dict:
        d = asdict(self)
        d["energy_j"] = self.energy_j
        return d


@dataclass
class ControllerState:
    t: int = 0
    active_config: ModelConfiguration | None = None
    sensor_activations: dict = field(default_factory=dict)
    t_c: int = 30
    next_context_id: int = 0
    switch_count: int = 0


def apply_gating(state: ControllerState, profile: SystemProfile, new_config: ModelConfiguration) -> ControllerState:
    """Sensors ``new_config`` needs stay active; every other sensor is clock gated."""
    state.sensor_activations = activations_for(profile, new_config)
    state.active_config = new_config
    return state


class StaticGate:
    """Always prefers one configuration; used to replay static baselines."""

    kind = "static"

    def __init__(self, profile: SystemProfile, config_id: str):
        self.config_id = profile.config(config_id).id
        self.config_ids = [c.id for c in profile.config_list]

    def estimate(self, context, true_losses):
        return {c: 0.0 if c == self.config_id else SENTINEL_LOSS for c in self.config_ids}

    def observe(self, context, config_id, loss):
        pass


class Controller:
    def __init__(self, trace: SimulationTrace, profile: SystemProfile, gate, weights: JointWeights, gamma: float, t_c: int = 30):
        self.trace = trace
        self.profile = profile
        self.gate = gate
        self.weights = weights
        self.gamma = gamma
        self.fusion = profile.fusion or FusionParams()
        self.loss_params = profile.loss or LossParams()
        self.normalize = bool(profile.optimizer.normalize) if profile.optimizer else False
        self.configs = {c.id: c for c in profile.config_list}
        self.expected_energy = expected_energy_map(profile)
        self.stem_overhead_j = context_id_overhead_j(profile)
        self.all_active = activations_for(profile, None)
        self.state = ControllerState(t_c=int(t_c))
        self.ledger = EnergyLedger()
        self._algo = {}

    def _algo_cost(self, config: ModelConfiguration) -> tuple:
        hit = self._algo.get(config.id)
        if hit is None:
            algo_j, latency = algorithm_step_energy(config, self.profile)
            ov = self.profile.overrides.get(config.id)
            if ov is not None and ov.system_energy_j is not None:
                # pinned system totals: whatever the sensors do not explain is compute
                sensor_part = sensors_energy(self.profile, activations_for(self.profile, config))
                algo_j = max(0.0, ov.system_energy_j - sensor_part)
            hit = self._algo[config.id] = (algo_j, latency)
        return hit

    def _score(self, config: ModelConfiguration, dets: Mapping, step: TraceStep) -> float:
        # same batch path as the oracle's true losses, so selections compare exactly
        return true_config_losses(step, self.trace, self.profile, [config], dets)[config.id]

    def _record(self, rec: StepRecord) -> StepRecord:
        self.ledger.record(
            rec.t, rec.sensor_j, rec.algo_j, rec.switch_j,
            context=rec.context, config_id=rec.config_id, loss=rec.loss, latency_s=rec.latency_s,
        )
        self.gate.observe(rec.context, rec.config_id, rec.loss)
        return rec

    def run_fusion_step(self, step: TraceStep, dets: Mapping) -> StepRecord:
        st = self.state
        config = st.active_config
        if config is None:
            raise RuntimeError("fusion step before any context identification")
        missing = sorted(b for b in config.branches if b not in dets)
        if missing:
            raise ConfigurationError(f"step {step.t}: no detections for active branch {missing[0]!r}")
        loss = self._score(config, dets, step)
        sensor_j = sensors_energy(self.profile, st.sensor_activations)
        algo_j, latency = self._algo_cost(config)
        st.t += 1
        return self._record(StepRecord(step.t, FUSION, step.context, config.id, loss, sensor_j, algo_j, 0.0, latency))

    def run_context_id_step(self, step: TraceStep, dets: Mapping) -> StepRecord:
        st = self.state
        # every sensor and stem runs on this step
        st.sensor_activations = dict(self.all_active)
        estimates = self.gate.estimate(
            step.context, lambda: true_config_losses(step, self.trace, self.profile, self.configs.values(), dets)
        )
        candidates = select_candidates(estimates, self.gamma)
        chosen = self.configs[select_config(candidates, estimates, self.expected_energy, self.weights, self.normalize)]
        switched = st.active_config is not None and chosen.id != st.active_config.id
        switch_j = self.profile.switch_overhead_j if switched else 0.0
        loss = self._score(chosen, dets, step)
        sensor_j = sensors_energy(self.profile, st.sensor_activations)
        algo_j, latency = self._algo_cost(chosen)
        algo_j += self.stem_overhead_j
        if switched:
            latency += self.profile.switch_overhead_s
            st.switch_count += 1
        apply_gating(st, self.profile, chosen)
        st.t += 1
        return self._record(StepRecord(step.t, CONTEXT_ID, step.context, chosen.id, loss, sensor_j, algo_j, switch_j, latency))

    def run(self, interval_policy: Callable | None = None) -> list:
        policy = interval_policy or ConstantInterval(self.state.t_c)
        records = []
        for step in self.trace:
            dets = branch_detections(step, self.trace, self.profile)
            if step.t == self.state.next_context_id:
                rec = self.run_context_id_step(step, dets)
                interval = int(policy(step.t, rec))
                if interval < 1:
                    raise ValueError("interval policy returned a value < 1")
                self.state.next_context_id = step.t + interval
            else:
                rec = self.run_fusion_step(step, dets)
            records.append(rec)
        return records


def summarize(records: list, switch_count: int) -> dict:
    n = len(records)
    energy = [r.energy_j for r in records]
    return {
        "n_steps": n,
        "n_context_id_steps": sum(1 for r in records if r.mode == CONTEXT_ID),
        "switch_count": switch_count,
        "avg_loss": sum(r.loss for r in records) / n,
        "avg_energy_j": sum(energy) / n,
        "avg_latency_s": sum(r.latency_s for r in records) / n,
        "total_energy_j": sum(energy),
        "total_sensor_j": sum(r.sensor_j for r in records),
        "total_algo_j": sum(r.algo_j for r in records),
        "total_switch_j": sum(r.switch_j for r in records),
    }


def run_trace(
    trace: SimulationTrace,
    profile: SystemProfile,
    gate="oracle",
    weights: JointWeights | float = 0.0,
    gamma: float | None = None,
    t_c: int = 30,
    seed: int = 0,
    interval_policy: Callable | None = None,
) -> tuple:
    """Run the controller over ``trace``; returns ``(records, summary)``.

    ``gate`` is a gate kind name or a gate object with ``estimate`` and
    ``observe``. Context identification happens at ``t = 0`` and then every
    ``t_c`` steps (or as ``interval_policy`` dictates).
    """
    if not len(trace):
        raise ValueError("trace is empty")
    if int(t_c) < 1:
        raise ValueError("t_c must be >= 1")
    if not isinstance(weights, JointWeights):
        weights = JointWeights(float(weights))
    if gamma is None:
        gamma = profile.gate.gamma if profile.gate is not None else 0.1
    if isinstance(gate, (str, GateKind)):
        gate = make_gate(gate, profile, seed)
    if getattr(gate, "kind", None) is GateKind.ESTIMATOR:
        check_trace_contexts(trace, profile)
    ctl = Controller(trace, profile, gate, weights, gamma, t_c)
    records = ctl.run(interval_policy)
    summary = summarize(records, ctl.state.switch_count)
    summary.update(
        gate=str(getattr(gate.kind, "value", gate.kind)),
        lambda_e=weights.lambda_e,
        gamma=float(gamma),
        t_c=int(t_c),
        seed=int(seed),
    )
    return records, summary


def replay_static(trace: SimulationTrace, profile: SystemProfile, config_id: str) -> tuple:
    """Run ``trace`` with one configuration pinned for its whole length."""
    gate = StaticGate(profile, config_id)
    return run_trace(trace, profile, gate, 0.0, gamma=0.0, t_c=len(trace) + 1)


def write_steps_csv(records: list, path) -> None:
    write_csv(path, STEP_COLUMNS, [r.row() for r in records])


def sensor_states(state: ControllerState) -> dict:
    return {k: SensorState(v).value for k, v in state.sensor_activations.items()}
