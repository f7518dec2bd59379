"""Shared domain vocabulary: sensors, branches, configurations, detections, profiles."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

DEFAULT_CONTEXTS = ("city", "fog", "junction", "motorway", "night", "rain", "rural", "snow")
DEFAULT_CONTEXT_KEY = "default"
CONFIG_SEP = "+"


class ConfigurationError(ValueError):
    """Raised for invalid profiles, unknown ids and broken references."""


class Modality(str, enum.Enum):
    CAMERA = "camera"
    LIDAR = "lidar"
    RADAR = "radar"


@dataclass(frozen=True)
class SensorSpec:
    id: str
    modality: Modality
    p_meas: float
    p_motor: float = 0.0
    freq_hz: float = 10.0
    spinning: bool = False

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        if self.p_meas < 0 or self.p_motor < 0:
            raise ConfigurationError(f"sensor {self.id!r}: powers must be >= 0")
        if not self.freq_hz > 0:
            raise ConfigurationError(f"sensor {self.id!r}: freq_hz must be > 0")
        if not self.spinning and self.p_motor != 0:
            raise ConfigurationError(f"sensor {self.id!r}: fixed sensor cannot have motor power")

    @property
    def p_total(self) -> float:
        return self.p_meas + self.p_motor


@dataclass(frozen=True, eq=False)
class BranchSpec:
    """One detection submodel; the unit the runtime switches on and off."""

    id: str
    required_sensors: frozenset
    latency_s: float
    power_w: float
    loss_profile: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "required_sensors", frozenset(self.required_sensors))
        if CONFIG_SEP in self.id or not self.id:
            raise ConfigurationError(f"branch id {self.id!r} must be non-empty and not contain {CONFIG_SEP!r}")
        if not self.required_sensors:
            raise ConfigurationError(f"branch {self.id!r}: required_sensors is empty")
        if not (self.latency_s > 0 and self.power_w > 0):
            raise ConfigurationError(f"branch {self.id!r}: latency_s and power_w must be > 0")
        for ctx, loss in self.loss_profile.items():
            if not loss >= 0:
                raise ConfigurationError(f"branch {self.id!r}: negative loss for context {ctx!r}")

    def expected_loss(self, context: str) -> float:
        if context in self.loss_profile:
            return self.loss_profile[context]
        if DEFAULT_CONTEXT_KEY in self.loss_profile:
            return self.loss_profile[DEFAULT_CONTEXT_KEY]
        raise ConfigurationError(f"branch {self.id!r} has no loss for context {context!r} and no default")


@dataclass(frozen=True, order=True)
class ModelConfiguration:
    """A set of branches executed together. Identity is the sorted branch set."""

    id: str
    branches: frozenset = field(compare=False)

    @classmethod
    def of(cls, branches: Iterable[str]) -> "ModelConfiguration":
        bs = frozenset(branches)
        if not bs:
            raise ConfigurationError("a configuration needs at least one branch")
        return cls(CONFIG_SEP.join(sorted(bs)), bs)

    def __len__(self):
        return len(self.branches)


@dataclass(frozen=True)
class ConfigOverride:
    """Measured whole-configuration figures that replace branch composition."""

    system_energy_j: float | None = None
    algo_power_w: float | None = None
    latency_s: float | None = None
    loss: float | None = None


@dataclass(frozen=True)
class Detection:
    class_id: int
    box: tuple
    confidence: float

    def __post_init__(self):
        x1, y1, x2, y2 = (float(v) for v in self.box)
        object.__setattr__(self, "box", (x1, y1, x2, y2))
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate box {self.box}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


class DetectionSet:
    """Column-oriented detections: ``boxes`` (n, 4), ``scores`` (n,), ``labels`` (n,)."""

    __slots__ = ("boxes", "scores", "labels")

    def __init__(self, boxes=None, scores=None, labels=None):
        self.boxes = np.zeros((0, 4)) if boxes is None else np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        self.scores = np.zeros(0) if scores is None else np.asarray(scores, dtype=np.float64).reshape(-1)
        self.labels = np.zeros(0, np.int64) if labels is None else np.asarray(labels, dtype=np.int64).reshape(-1)
        if not (len(self.boxes) == len(self.scores) == len(self.labels)):
            raise ValueError("boxes, scores and labels differ in length")

    @classmethod
    def from_detections(cls, dets: Iterable[Detection]) -> "DetectionSet":
        dets = list(dets)
        if not dets:
            return cls()
        return cls([d.box for d in dets], [d.confidence for d in dets], [d.class_id for d in dets])

    def validate(self) -> "DetectionSet":
        b = self.boxes
        if len(b) and not (np.all(b[:, 0] < b[:, 2]) and np.all(b[:, 1] < b[:, 3])):
            raise ValueError("degenerate box in detection set")
        if len(b) and not (np.all(self.scores >= 0) and np.all(self.scores <= 1)):
            raise ValueError("confidence outside [0, 1]")
        return self

    def __len__(self):
        return len(self.scores)

    def __iter__(self) -> Iterator[Detection]:
        for box, s, c in zip(self.boxes, self.scores, self.labels):
            yield Detection(int(c), tuple(box.tolist()), float(s))

    def __repr__(self):
        return f"DetectionSet(n={len(self)})"

    def equals(self, other: "DetectionSet") -> bool:
        return (
            np.array_equal(self.boxes, other.boxes)
            and np.array_equal(self.scores, other.scores)
            and np.array_equal(self.labels, other.labels)
        )

    def to_records(self) -> list:
        return [
            {"class_id": int(c), "box": [float(v) for v in box], "confidence": float(s)}
            for box, s, c in zip(self.boxes, self.scores, self.labels)
        ]

    @classmethod
    def from_records(cls, records: Sequence[Mapping]) -> "DetectionSet":
        if not records:
            return cls()
        return cls(
            [r["box"] for r in records], [r.get("confidence", 1.0) for r in records], [r["class_id"] for r in records]
        ).validate()


@dataclass(eq=False)
class SystemProfile:
    """Everything the simulator needs to know about one platform.

    Sub-tables (degradation, fusion, loss, optimizer, gate) are kept as the
    typed objects of their owning modules; :func:`ctxfuse.profile_io.load_profile`
    builds them from JSON.
    """

    sensors: list
    branches: list
    configurations: list | None = None
    max_config_size: int | None = None
    switch_overhead_s: float = 0.001
    switch_overhead_j: float = 0.0
    step_duration_s: float = 0.1
    latency_mode: str = "sequential"
    context_id_overhead_j: float | None = None
    overrides: dict = field(default_factory=dict)
    degradation: object = None
    fusion: object = None
    loss: object = None
    optimizer: object = None
    gate: object = None
    name: str = "custom"

    def __post_init__(self):
        self.sensor_map = {s.id: s for s in self.sensors}
        self.branch_map = {b.id: b for b in self.branches}
        if len(self.sensor_map) != len(self.sensors):
            raise ConfigurationError("duplicate sensor id")
        if len(self.branch_map) != len(self.branches):
            raise ConfigurationError("duplicate branch id")
        if not self.branches:
            raise ConfigurationError("profile has no branches")
        for b in self.branches:
            unknown = sorted(b.required_sensors - self.sensor_map.keys())
            if unknown:
                raise ConfigurationError(f"branch {b.id!r}: unknown sensor {unknown[0]!r}")
        if self.latency_mode not in ("sequential", "parallel"):
            raise ConfigurationError(f"latency_mode must be sequential or parallel, got {self.latency_mode!r}")
        if self.step_duration_s <= 0 or self.switch_overhead_s < 0 or self.switch_overhead_j < 0:
            raise ConfigurationError("step duration must be > 0 and switch overheads >= 0")
        if self.max_config_size is not None and self.max_config_size < 1:
            raise ConfigurationError("max_config_size must be >= 1")
        if self.configurations is not None:
            self.configurations = [
                c if isinstance(c, ModelConfiguration) else canonicalize_configuration(c, self)
                for c in self.configurations
            ]
            if not self.configurations:
                raise ConfigurationError("explicit configuration list is empty")
        for cid in self.overrides:
            canonicalize_configuration(cid.split(CONFIG_SEP), self)
        self._configs = None

    def required_sensors(self, config: ModelConfiguration) -> frozenset:
        out = frozenset()
        for bid in config.branches:
            out = out | self.branch_map[bid].required_sensors
        return out

    @property
    def config_list(self) -> list:
        if self._configs is None:
            self._configs = enumerate_configurations(self)
        return self._configs

    def membership(self) -> tuple:
        """``(config ids, branch ids, bool mask[config, branch])`` over :attr:`config_list`."""
        if getattr(self, "_membership", None) is None:
            bids = sorted(self.branch_map)
            col = {b: i for i, b in enumerate(bids)}
            configs = self.config_list
            mask = np.zeros((len(configs), len(bids)), np.bool_)
            for r, c in enumerate(configs):
                mask[r, [col[b] for b in c.branches]] = True
            self._membership = ([c.id for c in configs], bids, mask)
        return self._membership

    def config(self, config_id: str) -> ModelConfiguration:
        return canonicalize_configuration(config_id.split(CONFIG_SEP), self)


def canonicalize_configuration(branches: Iterable[str], profile: SystemProfile | None = None) -> ModelConfiguration:
    """Canonical, order-independent configuration for a branch set.

    >>> canonicalize_configuration({"cR", "cL"}).id
    'cL+cR'
    """
    config = ModelConfiguration.of(branches)
    if profile is not None:
        for bid in sorted(config.branches):
            if bid not in profile.branch_map:
                raise ConfigurationError(f"unknown branch id {bid!r}")
    return config


def enumerate_configurations(profile: SystemProfile) -> list:
    """All configurations of ``profile`` sorted by canonical id.

    Uses the explicit list when the profile carries one, otherwise every
    non-empty branch subset up to ``max_config_size``.
    """
    if profile.configurations is not None:
        uniq = {c.id: c for c in profile.configurations}
        return [uniq[k] for k in sorted(uniq)]
    ids = sorted(profile.branch_map)
    cap = len(ids) if profile.max_config_size is None else min(profile.max_config_size, len(ids))
    out = [ModelConfiguration.of(combo) for k in range(1, cap + 1) for combo in itertools.combinations(ids, k)]
    return sorted(out, key=lambda c: c.id)
