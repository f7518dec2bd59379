import numpy as np
import pytest

from ctxfuse.scenario import (
    DegradationModel,
    DegradationParams,
    branch_detections,
    combine_params,
    generate_trace,
    load_trace,
    materialize_detections,
    parse_segments,
    save_trace,
    synthesize_branch_detections,
    trace_to_jsonl,
    true_config_losses,
)
from ctxfuse.types import ConfigurationError, DetectionSet

from conftest import small_profile

GT = DetectionSet([[10, 10, 50, 60], [100, 100, 180, 150]], [1, 1], [0, 2])


def test_parse_segments():
    assert parse_segments("fog:30,snow:60") == [("fog", 30), ("snow", 60)]
    for bad in ("", "fog", "fog:x", "fog:0", ":3"):
        with pytest.raises(ValueError):
            parse_segments(bad)


def test_generate_trace_labels_and_determinism():
    tr = generate_trace([("snow", 10)], seed=5)
    assert len(tr) == 10 and {s.context for s in tr} == {"snow"}
    again = generate_trace([("snow", 10)], seed=5)
    assert all(a.ground_truth.equals(b.ground_truth) for a, b in zip(tr, again))
    assert trace_to_jsonl(tr) == trace_to_jsonl(again)


def test_segments_keep_order():
    tr = generate_trace([("fog", 3), ("snow", 2), ("fog", 1)])
    assert [s.context for s in tr] == ["fog"] * 3 + ["snow"] * 2 + ["fog"]
    assert [s.t for s in tr] == list(range(6))


def test_ground_truth_within_frame():
    tr = generate_trace([("city", 50)], seed=1)
    for s in tr:
        b = s.ground_truth.boxes
        if len(b):
            assert np.all(b[:, 0] >= 0) and np.all(b[:, 2] <= 640) and np.all(b[:, 3] <= 480)
            assert np.all(b[:, 2] - b[:, 0] >= 16)


def test_no_degradation_reproduces_ground_truth():
    p = small_profile()
    deg = DegradationModel.uniform(DegradationParams())
    out = synthesize_branch_detections(p.branch_map["cl"], GT, "fog", deg, np.random.default_rng(0), p)
    assert out.equals(GT)


def test_full_miss_gives_empty():
    p = small_profile()
    deg = DegradationModel.uniform(DegradationParams(miss_prob=1.0))
    assert len(synthesize_branch_detections(p.branch_map["r"], GT, "fog", deg, np.random.default_rng(0), p)) == 0


def test_early_fusion_takes_best_member():
    p = small_profile()
    deg = DegradationModel(
        modalities={"camera": {"default": DegradationParams(0.2, 0.5, 1.0, 0.6)}},
        default=DegradationParams(0.05, 0.1, 0.2, 0.9),
    )
    # give ecam a radar member through a scratch profile
    from ctxfuse.types import BranchSpec, SystemProfile

    q = SystemProfile(p.sensors, [BranchSpec("cr", {"cl", "r"}, 0.01, 1.0)])
    eff = deg.branch_params(q.branch_map["cr"], q, "fog")
    assert eff.miss_prob == 0.1
    assert eff == DegradationParams(0.05, 0.1, 0.2, 0.9)
    assert deg.coin_modality(q.branch_map["cr"], q, "fog") == "radar"


def test_combine_policies():
    a, b = DegradationParams(0.1, 0.5, 1.0, 0.4), DegradationParams(0.3, 0.1, 0.0, 0.8)
    assert combine_params([a, b], "worst") == DegradationParams(0.3, 0.5, 1.0, 0.4)
    assert combine_params([a, b], "mean").miss_prob == pytest.approx(0.3)
    with pytest.raises(ConfigurationError):
        combine_params([a, b], "median")


def test_degradation_params_validation():
    with pytest.raises(ConfigurationError):
        DegradationParams(miss_prob=1.5)
    with pytest.raises(ConfigurationError):
        DegradationParams(box_noise_sigma=-0.1)


def test_branch_samples_are_shared_and_reproducible(default_profile):
    tr = generate_trace([("fog", 4)], seed=3)
    a = branch_detections(tr.steps[2], tr, default_profile)
    b = branch_detections(tr.steps[2], tr, default_profile)
    assert all(a[k].equals(b[k]) for k in a)
    m = materialize_detections(tr, default_profile)
    assert all(m.steps[2].detections[k].equals(a[k]) for k in a)


def test_same_modality_branches_miss_together(default_profile):
    tr = generate_trace([("night", 200)], seed=11)
    both = only_one = 0
    for s in tr:
        d = branch_detections(s, tr, default_profile)
        n = len(s.ground_truth)
        # false positives are appended after kept objects, so count kept objects via IoU
        from ctxfuse.fusion import iou_matrix

        def kept(ds):
            if n == 0 or len(ds) == 0:
                return np.zeros(n, bool)
            return (iou_matrix(s.ground_truth.boxes, ds.boxes) > 0.1).any(axis=1)

        l, r = kept(d["cam_left"]), kept(d["cam_right"])
        both += int(np.sum(~l & ~r))
        only_one += int(np.sum(l ^ r))
    assert both > 5 * max(only_one, 1)


def test_true_losses_batch_matches_direct(default_profile):
    from ctxfuse.scenario import config_loss

    p = default_profile
    tr = generate_trace([("rain", 3)], seed=9)
    for s in tr:
        dets = branch_detections(s, tr, p)
        batch = true_config_losses(s, tr, p, dets=dets)
        assert len(batch) == 127
        for c in p.config_list[::9]:
            assert batch[c.id] == pytest.approx(config_loss(c, dets, s.ground_truth, p.fusion, p.loss), abs=1e-12)


def test_true_losses_single_config(default_profile):
    tr = generate_trace([("fog", 1)], seed=0)
    out = true_config_losses(tr.steps[0], tr, default_profile, [default_profile.config("radar")])
    assert list(out) == ["radar"]


def test_all_degraded_step_gives_miss_penalty(default_profile):
    import dataclasses

    p = dataclasses.replace(default_profile, degradation=DegradationModel.uniform(DegradationParams(miss_prob=1.0)))
    tr = generate_trace([("fog", 5)], seed=2)
    for s in tr:
        n = len(s.ground_truth)
        assert set(true_config_losses(s, tr, p).values()) <= {float(n)}


def test_trace_roundtrip(tmp_path, default_profile):
    tr = materialize_detections(generate_trace([("fog", 3), ("city", 2)], seed=4), default_profile)
    path = tmp_path / "t.jsonl"
    save_trace(tr, path)
    back = load_trace(path)
    assert trace_to_jsonl(back) == path.read_text()
    assert back.seed == 4 and [s.context for s in back] == [s.context for s in tr]


def test_trace_load_errors(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"t": 0, "context": "fog", "ground_truth": []}\n{"t": 5, "context": "fog", "ground_truth": []}\n')
    with pytest.raises(ConfigurationError, match="t=5"):
        load_trace(p)
    p.write_text("{not json\n")
    with pytest.raises(ConfigurationError, match=":1:"):
        load_trace(p)
    p.write_text("")
    with pytest.raises(ConfigurationError):
        load_trace(p)
    p.write_text('{"kind": "header", "schema_version": 9}\n')
    with pytest.raises(ConfigurationError, match="schema_version"):
        load_trace(p)
