"""Synthetic traces: contexts, ground truth, and per-branch detections.

Branch detections are a pure function of ``(trace seed, t, branch id)``, so
every configuration, static replay and controller run sees the same samples
for a given step.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fusion import FusionParams, LossParams, batch_config_losses, detection_loss, weighted_boxes_fusion
from .types import DEFAULT_CONTEXT_KEY, BranchSpec, ConfigurationError, DetectionSet, SystemProfile

TRACE_SCHEMA_VERSION = 1
DEFAULT_FRAME = (640.0, 480.0)
DEFAULT_SCENARIO = "city:300,fog:300,junction:300,motorway:300,night:300,rain:300,rural:300,snow:300"
DEFAULT_SCENARIO_SEED = 7


@dataclass(frozen=True)
class DegradationParams:
    box_noise_sigma: float = 0.0
    miss_prob: float = 0.0
    false_pos_rate: float = 0.0
    conf_scale: float = 1.0

    def __post_init__(self):
        if self.box_noise_sigma < 0 or self.false_pos_rate < 0:
            raise ConfigurationError("box_noise_sigma and false_pos_rate must be >= 0")
        if not 0 <= self.miss_prob <= 1 or not 0 <= self.conf_scale <= 1:
            raise ConfigurationError("miss_prob and conf_scale must lie in [0, 1]")


def combine_params(params: Sequence[DegradationParams], policy: str = "best") -> DegradationParams:
    """Degradation of an early-fusion branch from its member modalities."""
    if len(params) == 1:
        return params[0]
    cols = {
        "box_noise_sigma": [p.box_noise_sigma for p in params],
        "miss_prob": [p.miss_prob for p in params],
        "false_pos_rate": [p.false_pos_rate for p in params],
        "conf_scale": [p.conf_scale for p in params],
    }
    if policy == "best":
        pick = {k: min(v) for k, v in cols.items()}
        pick["conf_scale"] = max(cols["conf_scale"])
    elif policy == "worst":
        pick = {k: max(v) for k, v in cols.items()}
        pick["conf_scale"] = min(cols["conf_scale"])
    elif policy == "mean":
        pick = {k: float(np.mean(v)) for k, v in cols.items()}
    else:
        raise ConfigurationError(f"unknown fusion policy {policy!r}")
    return DegradationParams(**pick)


@dataclass
class DegradationModel:
    """(modality, context) -> params, with optional per-branch overrides."""

    modalities: dict = field(default_factory=dict)
    branches: dict = field(default_factory=dict)
    default: DegradationParams = field(default_factory=DegradationParams)
    policy: str = "best"

    @staticmethod
    def _lookup(table: Mapping, context: str):
        if context in table:
            return table[context]
        return table.get(DEFAULT_CONTEXT_KEY)

    def modality_params(self, modality: str, context: str) -> DegradationParams:
        found = self._lookup(self.modalities.get(str(getattr(modality, "value", modality)), {}), context)
        return self.default if found is None else found

    def branch_params(self, branch: BranchSpec, profile: SystemProfile, context: str) -> DegradationParams:
        found = self._lookup(self.branches.get(branch.id, {}), context)
        if found is not None:
            return found
        mods = sorted({profile.sensor_map[s].modality.value for s in branch.required_sensors})
        return combine_params([self.modality_params(m, context) for m in mods], self.policy)

    def coin_modality(self, branch: BranchSpec, profile: SystemProfile, context: str) -> str:
        """Modality whose per-object miss draw ``branch`` shares: its least-missing member."""
        mods = sorted({profile.sensor_map[s].modality.value for s in branch.required_sensors})
        return min(mods, key=lambda m: self.modality_params(m, context).miss_prob)

    @classmethod
    def uniform(cls, params: DegradationParams) -> "DegradationModel":
        return cls(default=params)


@dataclass
class TraceStep:
    t: int
    context: str
    ground_truth: DetectionSet
    detections: dict | None = None  # branch id -> DetectionSet


@dataclass
class SimulationTrace:
    steps: list
    seed: int = 0
    frame: tuple = DEFAULT_FRAME
    n_classes: int = 3

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    @property
    def contexts(self) -> list:
        return sorted({s.context for s in self.steps})


def parse_segments(spec: str) -> list:
    """``"fog:30,snow:60"`` -> ``[("fog", 30), ("snow", 60)]``."""
    out = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, n = part.partition(":")
        if not sep or not name.strip():
            raise ValueError(f"bad segment {part!r}; expected context:length")
        try:
            length = int(n)
        except ValueError:
            raise ValueError(f"bad segment length in {part!r}") from None
        if length < 1:
            raise ValueError(f"segment {part!r}: length must be >= 1")
        out.append((name.strip(), length))
    if not out:
        raise ValueError("empty segment spec")
    return out


def _ground_truth(rng: np.random.Generator, mean_objects: float, frame, n_classes: int, min_side: float = 16.0) -> DetectionSet:
    W, H = frame
    n = int(rng.poisson(mean_objects))
    if n == 0:
        return DetectionSet()
    w = rng.uniform(min_side, W / 4, n)
    h = rng.uniform(min_side, H / 4, n)
    x1 = rng.uniform(0, W - w)
    y1 = rng.uniform(0, H - h)
    boxes = np.stack([x1, y1, x1 + w, y1 + h], axis=1)
    return DetectionSet(boxes, np.ones(n), rng.integers(0, n_classes, n))


def generate_trace(
    contexts: Sequence[tuple],
    degradation: DegradationModel | None = None,
    objects_per_frame: float = 3.0,
    seed: int = 0,
    profile: SystemProfile | None = None,
    frame=DEFAULT_FRAME,
    n_classes: int = 3,
) -> SimulationTrace:
    """Deterministic trace of contiguous context segments.

    Ground truth is Poisson(``objects_per_frame``) uniform boxes. When both
    ``profile`` and ``degradation`` are given the branch detections are
    materialized into the trace; otherwise they are synthesized on demand.
    """
    rng = np.random.default_rng([seed, 0x6774])
    steps = []
    t = 0
    for ctx, length in contexts:
        if length < 1:
            raise ValueError(f"segment {ctx!r}: length must be >= 1")
        for _ in range(length):
            steps.append(TraceStep(t, ctx, _ground_truth(rng, objects_per_frame, frame, n_classes)))
            t += 1
    trace = SimulationTrace(steps, seed, tuple(frame), n_classes)
    if profile is not None and degradation is not None:
        trace = materialize_detections(trace, profile, degradation)
    return trace


def _branch_rng(seed: int, t: int, branch_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, t, zlib.crc32(branch_id.encode())])


def synthesize_branch_detections(
    branch: BranchSpec,
    gt: DetectionSet,
    context: str,
    degradation: DegradationModel,
    rng: np.random.Generator,
    profile: SystemProfile,
    frame=DEFAULT_FRAME,
    n_classes: int = 3,
    miss_draws: np.ndarray | None = None,
) -> DetectionSet:
    """Noisy copy of ``gt`` as seen by ``branch`` in ``context``.

    An object is dropped when its uniform draw falls below the branch's
    effective ``miss_prob``. ``miss_draws`` lets branches of one modality
    share those draws so their misses are correlated; without it the draws
    come from ``rng``. Box noise is drawn for every object whether or not
    it is kept, so parameter changes do not shift the random stream.
    """
    p = degradation.branch_params(branch, profile, context)
    n = len(gt)
    u = rng.random(n) if miss_draws is None else miss_draws
    noise = rng.standard_normal((n, 4))
    keep = u >= p.miss_prob
    boxes = gt.boxes[keep]
    rel = p.box_noise_sigma * noise[keep]
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    jit = boxes + rel * np.stack([w, h, w, h], axis=1)
    lo_x = np.minimum(jit[:, 0], jit[:, 2])
    hi_x = np.maximum(jit[:, 0], jit[:, 2])
    lo_y = np.minimum(jit[:, 1], jit[:, 3])
    hi_y = np.maximum(jit[:, 1], jit[:, 3])
    hi_x = np.maximum(hi_x, lo_x + 0.05 * w)
    hi_y = np.maximum(hi_y, lo_y + 0.05 * h)
    out_boxes = np.stack([lo_x, lo_y, hi_x, hi_y], axis=1)
    proxy = np.minimum(1.0, np.abs(rel).mean(axis=1)) if len(rel) else np.zeros(0)
    conf = np.clip(p.conf_scale * (1.0 - proxy), 0.0, 1.0)
    labels = gt.labels[keep]

    n_fp = int(rng.poisson(p.false_pos_rate)) if p.false_pos_rate > 0 else 0
    if n_fp:
        W, H = frame
        fw = rng.uniform(16.0, W / 4, n_fp)
        fh = rng.uniform(16.0, H / 4, n_fp)
        fx = rng.uniform(0, W - fw)
        fy = rng.uniform(0, H - fh)
        out_boxes = np.concatenate([out_boxes, np.stack([fx, fy, fx + fw, fy + fh], axis=1)])
        conf = np.concatenate([conf, p.conf_scale * rng.uniform(0.05, 0.5, n_fp)])
        labels = np.concatenate([labels, rng.integers(0, n_classes, n_fp)])
    return DetectionSet(out_boxes, conf, labels)


def branch_detections(step: TraceStep, trace: SimulationTrace, profile: SystemProfile, degradation: DegradationModel | None = None) -> dict:
    """All branch outputs for ``step``; cached ones are used as-is."""
    cached = step.detections or {}
    deg = degradation if degradation is not None else profile.degradation
    out = {}
    draws = {}
    n = len(step.ground_truth)
    for b in profile.branches:
        if b.id in cached:
            out[b.id] = cached[b.id]
            continue
        if deg is None:
            raise ConfigurationError(f"step {step.t}: no detections for branch {b.id!r} and no degradation model")
        mod = deg.coin_modality(b, profile, step.context)
        if mod not in draws:
            draws[mod] = _branch_rng(trace.seed, step.t, "modality:" + mod).random(n)
        rng = _branch_rng(trace.seed, step.t, b.id)
        out[b.id] = synthesize_branch_detections(
            b, step.ground_truth, step.context, deg, rng, profile, trace.frame, trace.n_classes, miss_draws=draws[mod]
        )
    return out


def materialize_detections(trace: SimulationTrace, profile: SystemProfile, degradation: DegradationModel | None = None) -> SimulationTrace:
    """Copy of ``trace`` with every branch's detections cached on each step."""
    steps = [replace(s, detections=branch_detections(s, trace, profile, degradation)) for s in trace.steps]
    return replace(trace, steps=steps)


def config_loss(config, dets: Mapping[str, DetectionSet], gt: DetectionSet, fusion: FusionParams, loss: LossParams) -> float:
    fused = weighted_boxes_fusion([dets[b] for b in sorted(config.branches)], fusion)
    return detection_loss(fused, gt, loss).total


def true_config_losses(
    step: TraceStep, trace: SimulationTrace, profile: SystemProfile, configs: Iterable | None = None, dets: Mapping | None = None
) -> dict:
    """Ground-truth loss of every configuration on ``step``, from shared branch samples."""
    if dets is None:
        dets = branch_detections(step, trace, profile)
    ids, bids, mask = profile.membership()
    if configs is not None:
        pos = {cid: i for i, cid in enumerate(ids)}
        ids = [c.id for c in configs]
        mask = mask[[pos[c] for c in ids]]
    losses = batch_config_losses(
        [dets[b] for b in bids], mask, step.ground_truth, profile.fusion or FusionParams(), profile.loss or LossParams()
    )
    return dict(zip(ids, losses.tolist()))


def calibrate_priors(profile: SystemProfile, contexts: Sequence[str], steps_per_context: int = 200, seed: int = 1234, objects_per_frame: float = 3.0) -> tuple:
    """Offline per-context mean loss of every configuration.

    Returns ``(config_priors, branch_loss_profiles)``; both carry a
    ``default`` entry equal to the mean over contexts.
    """
    priors = {c.id: {} for c in profile.config_list}
    for k, ctx in enumerate(contexts):
        trace = generate_trace([(ctx, steps_per_context)], seed=seed + k, objects_per_frame=objects_per_frame)
        sums = dict.fromkeys(priors, 0.0)
        for step in trace:
            for cid, v in true_config_losses(step, trace, profile).items():
                sums[cid] += v
        for cid in priors:
            priors[cid][ctx] = round(sums[cid] / steps_per_context, 6)
    for cid, tab in priors.items():
        tab[DEFAULT_CONTEXT_KEY] = round(float(np.mean([tab[c] for c in contexts])), 6)
    branch_profiles = {b.id: dict(priors[b.id]) for b in profile.branches if b.id in priors}
    return priors, branch_profiles


def check_trace_contexts(trace: SimulationTrace, profile: SystemProfile) -> None:
    for ctx in trace.contexts:
        for b in profile.branches:
            if ctx not in b.loss_profile and DEFAULT_CONTEXT_KEY not in b.loss_profile:
                raise ConfigurationError(f"branch {b.id!r} has no loss profile entry for context {ctx!r} and no default")


# --- JSONL trace files --------------------------------------------------------


def trace_to_jsonl(trace: SimulationTrace) -> str:
    """The exact text :func:`save_trace` writes; also what trace hashes are taken over."""
    header = {
        "schema_version": TRACE_SCHEMA_VERSION,
        "kind": "header",
        "seed": trace.seed,
        "frame": list(trace.frame),
        "n_classes": trace.n_classes,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for s in trace.steps:
        rec = {"t": s.t, "context": s.context, "ground_truth": s.ground_truth.to_records()}
        if s.detections:
            rec["detections"] = {k: v.to_records() for k, v in sorted(s.detections.items())}
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def save_trace(trace: SimulationTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(trace_to_jsonl(trace))


def load_trace(path) -> SimulationTrace:
    """Read a JSONL trace. The optional first line is a header with ``schema_version`` and ``seed``."""
    seed, frame, n_classes = 0, DEFAULT_FRAME, 3
    steps = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            if rec.get("kind") == "header":
                if rec.get("schema_version") != TRACE_SCHEMA_VERSION:
                    raise ConfigurationError(f"{path}:{lineno}: unsupported schema_version {rec.get('schema_version')!r}")
                seed = int(rec.get("seed", 0))
                frame = tuple(rec.get("frame", DEFAULT_FRAME))
                n_classes = int(rec.get("n_classes", 3))
                continue
            try:
                gt = DetectionSet.from_records(rec["ground_truth"])
                dets = rec.get("detections")
                if dets is not None:
                    dets = {k: DetectionSet.from_records(v) for k, v in dets.items()}
                steps.append(TraceStep(int(rec["t"]), str(rec["context"]), gt, dets))
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigurationError(f"{path}:{lineno}: bad step record ({e})") from None
    if not steps:
        raise ConfigurationError(f"{path}: trace has no steps")
    for i, s in enumerate(steps):
        if s.t != i:
            raise ConfigurationError(f"{path}: step {i} has t={s.t}; steps must be 0..N-1 in order")
    return SimulationTrace(steps, seed, frame, n_classes)
