"""JSON profile files: schema validation, bundled profiles, round-trip export."""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

from .fusion import FusionParams, LossParams
from .gating import GateParams
from .optimizer import OptimizerParams
from .scenario import DegradationModel, DegradationParams
from .types import BranchSpec, ConfigOverride, ConfigurationError, SensorSpec, SystemProfile

PROFILE_SCHEMA_VERSION = 1
BUNDLED = {"default": "default.json", "radiate-table1": "radiate-table1.json"}


class ProfileError(ConfigurationError):
    pass


def bundled_path(name: str):
    return resources.files("ctxfuse").joinpath("data", BUNDLED[name])


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise ProfileError(f"{where}: missing field {key!r}")
    return d[key]


def _num(d: dict, key: str, where: str, default=None):
    v = d.get(key, default)
    if v is None:
        if default is None and key not in d:
            raise ProfileError(f"{where}: missing field {key!r}")
        return v
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProfileError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


def _deg(d: dict, where: str) -> DegradationParams:
    allowed = {"box_noise_sigma", "miss_prob", "false_pos_rate", "conf_scale"}
    extra = set(d) - allowed
    if extra:
        raise ProfileError(f"{where}: unknown field {sorted(extra)[0]!r}")
    try:
        return DegradationParams(**{k: float(v) for k, v in d.items()})
    except (ConfigurationError, TypeError, ValueError) as e:
        raise ProfileError(f"{where}: {e}") from None


def profile_from_dict(doc: dict, name: str = "custom") -> SystemProfile:
    if not isinstance(doc, dict):
        raise ProfileError("profile: top level must be an object")
    if doc.get("schema_version") != PROFILE_SCHEMA_VERSION:
        raise ProfileError(f"profile.schema_version: expected {PROFILE_SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    sensors = []
    for i, s in enumerate(_req(doc, "sensors", "profile")):
        where = f"sensors[{i}]"
        try:
            sensors.append(
                SensorSpec(
                    id=str(_req(s, "id", where)),
                    modality=_req(s, "modality", where),
                    p_meas=_num(s, "p_meas", where),
                    p_motor=_num(s, "p_motor", where, 0.0),
                    freq_hz=_num(s, "freq_hz", where, 10.0),
                    spinning=bool(s.get("spinning", False)),
                )
            )
        except ValueError as e:
            raise ProfileError(f"{where}: {e}") from None
    sensor_ids = {s.id for s in sensors}
    branches = []
    for i, b in enumerate(_req(doc, "branches", "profile")):
        where = f"branches[{i}]"
        req = list(_req(b, "sensors", where))
        for sid in req:
            if sid not in sensor_ids:
                raise ProfileError(f"{where}.sensors: unknown sensor {sid!r}")
        try:
            branches.append(
                BranchSpec(
                    id=str(_req(b, "id", where)),
                    required_sensors=frozenset(req),
                    latency_s=_num(b, "latency_s", where),
                    power_w=_num(b, "power_w", where),
                    loss_profile={k: float(v) for k, v in b.get("loss_profile", {}).items()},
                )
            )
        except ValueError as e:
            raise ProfileError(f"{where}: {e}") from None

    configs = None
    max_size = None
    overrides = {}
    spec = doc.get("configurations", {"max_size": None})
    if isinstance(spec, dict):
        max_size = spec.get("max_size")
    elif isinstance(spec, list):
        configs = []
        for i, c in enumerate(spec):
            where = f"configurations[{i}]"
            if isinstance(c, dict):
                members = list(_req(c, "branches", where))
                pinned = c.get("pinned")
            else:
                members, pinned = list(c), None
            known = {b.id for b in branches}
            for bid in members:
                if bid not in known:
                    raise ProfileError(f"{where}: unknown branch {bid!r}")
            configs.append(members)
            if pinned:
                allowed = {"system_energy_j", "algo_power_w", "latency_s", "loss"}
                if set(pinned) - allowed:
                    raise ProfileError(f"{where}.pinned: unknown field {sorted(set(pinned) - allowed)[0]!r}")
                overrides["+".join(sorted(set(members)))] = ConfigOverride(**{k: float(v) for k, v in pinned.items()})
    else:
        raise ProfileError("profile.configurations: expected an object or a list")

    deg_doc = doc.get("degradation", {})
    degradation = DegradationModel(
        modalities={
            m: {ctx: _deg(p, f"degradation.modalities.{m}.{ctx}") for ctx, p in tab.items()}
            for m, tab in deg_doc.get("modalities", {}).items()
        },
        branches={
            b: {ctx: _deg(p, f"degradation.branches.{b}.{ctx}") for ctx, p in tab.items()}
            for b, tab in deg_doc.get("branches", {}).items()
        },
        default=_deg(deg_doc.get("default", {}), "degradation.default"),
        policy=deg_doc.get("policy", "best"),
    )
    for bid in degradation.branches:
        if bid not in {b.id for b in branches}:
            raise ProfileError(f"degradation.branches: unknown branch {bid!r}")
    try:
        fusion = FusionParams(**doc.get("fusion", {}))
        loss = LossParams(**doc.get("loss", {}))
        optimizer = OptimizerParams(**doc.get("optimizer", {}))
        gate = GateParams(**doc.get("gate", {}))
    except (TypeError, ValueError) as e:
        raise ProfileError(f"profile: {e}") from None
    try:
        return SystemProfile(
            sensors=sensors,
            branches=branches,
            configurations=configs,
            max_config_size=max_size,
            switch_overhead_s=float(doc.get("switch_overhead_s", 0.001)),
            switch_overhead_j=float(doc.get("switch_overhead_j", 0.0)),
            step_duration_s=float(doc.get("step_duration_s", 0.1)),
            latency_mode=doc.get("latency_mode", "sequential"),
            context_id_overhead_j=doc.get("context_id_overhead_j"),
            overrides=overrides,
            degradation=degradation,
            fusion=fusion,
            loss=loss,
            optimizer=optimizer,
            gate=gate,
            name=str(doc.get("name", name)),
        )
    except ConfigurationError as e:
        raise ProfileError(f"profile: {e}") from None


def load_profile_document(path_or_name) -> tuple:
    """``(parsed JSON, raw bytes)`` for a file path or a bundled profile name."""
    if str(path_or_name) in BUNDLED:
        raw = bundled_path(str(path_or_name)).read_bytes()
        src = f"<bundled {path_or_name}>"
    else:
        p = Path(path_or_name)
        if not p.is_file():
            raise ProfileError(f"profile not found: {path_or_name}")
        raw = p.read_bytes()
        src = str(p)
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ProfileError(f"{src}: line {e.lineno} column {e.colno}: {e.msg}") from None
    return doc, raw


def load_profile(path_or_name) -> SystemProfile:
    """Load and fully resolve a profile from a JSON file or a bundled name
    (``"default"`` or ``"radiate-table1"``)."""
    doc, _ = load_profile_document(path_or_name)
    return profile_from_dict(doc, name=str(path_or_name))


def profile_hash(path_or_name) -> str:
    return hashlib.sha256(load_profile_document(path_or_name)[1]).hexdigest()
