"""Sensor, algorithm and system energy per step, with clock-gating semantics."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Mapping

from .types import ConfigurationError, ModelConfiguration, SensorSpec, SystemProfile


class SensorState(str, enum.Enum):
    ACTIVE = "active"
    GATED = "gated"


def sensor_step_energy(sensor: SensorSpec, state: SensorState, step_duration_s: float) -> float:
    """Joules drawn by ``sensor`` over one step.

    Gating only cuts the measurement electronics, so a gated spinning sensor
    keeps paying for its motor. With ``step_duration_s = 1 / sensor.freq_hz``
    an active sensor costs ``(p_meas + p_motor) / freq_hz``.
    """
    if not step_duration_s > 0:
        raise ValueError("step_duration_s must be > 0")
    if SensorState(state) is SensorState.ACTIVE:
        return (sensor.p_meas + sensor.p_motor) * step_duration_s
    if sensor.spinning:
        return sensor.p_motor * step_duration_s
    return 0.0


def sensors_energy(profile: SystemProfile, activations: Mapping[str, SensorState], step_duration_s: float | None = None) -> float:
    dt = profile.step_duration_s if step_duration_s is None else step_duration_s
    return sum(sensor_step_energy(s, activations[s.id], dt) for s in profile.sensors)


def activations_for(profile: SystemProfile, config: ModelConfiguration | None) -> dict:
    """Active for sensors ``config`` needs, gated otherwise; all active for ``None``."""
    if config is None:
        return {s.id: SensorState.ACTIVE for s in profile.sensors}
    need = profile.required_sensors(config)
    return {s.id: SensorState.ACTIVE if s.id in need else SensorState.GATED for s in profile.sensors}


def algorithm_step_energy(config: ModelConfiguration, profile: SystemProfile) -> tuple:
    """``(joules, seconds)`` to run ``config`` once.

    A pinned per-configuration power or latency in ``profile.overrides`` wins
    over branch composition. Otherwise energy is the sum of branch
    power x latency, and latency is summed (``sequential``) or maxed
    (``parallel``) over branches.
    """
    if not config.branches:
        raise ValueError("empty configuration")
    branches = []
    for bid in sorted(config.branches):
        try:
            branches.append(profile.branch_map[bid])
        except KeyError:
            raise ConfigurationError(f"unknown branch id {bid!r}") from None
    lat = [b.latency_s for b in branches]
    latency = sum(lat) if profile.latency_mode == "sequential" else max(lat)
    energy = sum(b.power_w * b.latency_s for b in branches)
    ov = profile.overrides.get(config.id)
    if ov is not None:
        if ov.latency_s is not None:
            latency = ov.latency_s
        if ov.algo_power_w is not None:
            energy = ov.algo_power_w * latency
    return energy, latency


def system_step_energy(sensor_j: float, algorithm_j: float, switch_j: float = 0.0) -> float:
    if sensor_j < 0 or algorithm_j < 0 or switch_j < 0:
        raise ValueError("energy components must be >= 0")
    return sensor_j + algorithm_j + switch_j


def context_id_overhead_j(profile: SystemProfile) -> float:
    """Stem cost of a context-ID step, defaulting to the priciest configuration."""
    if profile.context_id_overhead_j is not None:
        return profile.context_id_overhead_j
    return max(algorithm_step_energy(c, profile)[0] for c in profile.config_list)


LEDGER_COLUMNS = ("t", "context", "config_id", "sensor_j", "algo_j", "switch_j", "loss", "latency_s")


@dataclass
class LedgerEntry:
    t: int
    sensor_j: float
    algo_j: float
    switch_j: float
    context: str = ""
    config_id: str = ""
    loss: float = 0.0
    latency_s: float = 0.0

    @property
    def total_j(self) -> float:
        return self.sensor_j + self.algo_j + self.switch_j


@dataclass
class EnergyLedger:
    """Per-step energy entries with running component totals. Single writer."""

    entries: list = field(default_factory=list)
    sensor_j: float = 0.0
    algo_j: float = 0.0
    switch_j: float = 0.0

    def record(self, t, sensor_j, algo_j, switch_j=0.0, **extra) -> LedgerEntry:
        if sensor_j < 0 or algo_j < 0 or switch_j < 0:
            raise ValueError("ledger entries must be >= 0")
        e = LedgerEntry(t, sensor_j, algo_j, switch_j, **extra)
        self.entries.append(e)
        self.sensor_j += sensor_j
        self.algo_j += algo_j
        self.switch_j += switch_j
        return e

    @property
    def total_j(self) -> float:
        return self.sensor_j + self.algo_j + self.switch_j

    def __len__(self):
        return len(self.entries)

    def to_csv(self, path) -> None:
        from .reporting import fmt

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LEDGER_COLUMNS)
            for e in self.entries:
                w.writerow([e.t, e.context, e.config_id, fmt(e.sensor_j), fmt(e.algo_j), fmt(e.switch_j), fmt(e.loss), fmt(e.latency_s)])
