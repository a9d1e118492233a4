import numpy as np
import pytest
import torch

from hrpro.checkpoint import check_compatible, load_checkpoint, save_checkpoint
from hrpro.errors import CheckpointError
from hrpro.evaluation import temporal_iou
from hrpro.inference import infer_corpus, infer_video, raw_detections
from hrpro.proposals import candidates_for_classes, video_level_classes



def _silenced(model):
    """Copy of ``model`` whose class head outputs ~0, so P is ~0 everywhere."""
    import copy
    m = copy.deepcopy(model)
    with torch.no_grad():
        m.net.cls.weight.zero_()
        m.net.cls.bias.fill_(-60.0)
    return m


def test_zero_P_gives_no_detections(tiny_run, tiny_split):
    cfg, res = tiny_run
    model = _silenced(res["model"])
    # the lowest default threshold is 0, so drop it: nothing can exceed a positive one
    cfg = cfg.replace(theta_P=[0.05, 0.1])
    for r in tiny_split[1]:
        assert infer_video(r, model, cfg) == []


def test_two_detections_per_candidate(tiny_run, tiny_split):
    cfg, res = tiny_run
    model = res["model"]
    for r in tiny_split[1]:
        dets, out = raw_detections(r, model, cfg)
        cands = candidates_for_classes(out.P, video_level_classes(out.P, cfg.video_cls_threshold),
                                       cfg.theta_P, cfg.oic_inflation)
        assert len(dets) == 2 * len(cands)
        n = len(cands)
        # first half keeps the candidate spans
        assert [(d.start, d.end, d.label) for d in dets[:n]] == [(c.start, c.end, c.label) for c in cands]
        assert all(0 <= d.start < d.end <= r.T for d in dets)


def test_snippet_only_detections_use_oic(tiny_run, tiny_split):
    cfg, res = tiny_run
    cfg = cfg.replace(enable_instance=False)
    r = tiny_split[1][0]
    dets, out = raw_detections(r, res["model"], cfg)
    cands = candidates_for_classes(out.P, video_level_classes(out.P, 0.5), cfg.theta_P)
    assert [d.confidence for d in dets] == [c.score_oic for c in cands]


def test_top1_detection_hits_ground_truth(desk_run, standard_split):
    _, res = desk_run
    test = standard_split[1]
    hits = 0
    for r in test:
        dets = res["detections"][r.video_id]
        if not dets:
            continue
        top = max(dets, key=lambda d: d.confidence)
        hits += any(g.label == top.label and temporal_iou(top, g) > 0.5 for g in r.gt_instances)
    assert hits / len(test) >= 0.9


def test_infer_corpus_keys(tiny_run, tiny_split):
    cfg, res = tiny_run
    out = infer_corpus(tiny_split[1], res["model"], cfg)
    assert list(out) == [r.video_id for r in tiny_split[1]]


# -- checkpoints -----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, tiny_run, tiny_split):
    cfg, res = tiny_run
    model = res["model"]
    path = save_checkpoint(tmp_path / "m.pt", model)
    back = load_checkpoint(path)
    assert back.config == model.config and back.num_classes == model.num_classes and back.has_instance_stage
    np.testing.assert_array_equal(back.memory.prototypes, model.memory.prototypes)
    for r in tiny_split[1]:
        assert infer_video(r, back, cfg) == infer_video(r, model, cfg)


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.pt"
    bad.write_text("{}")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    torch.save({"format": "other"}, tmp_path / "other.pt")
    with pytest.raises(CheckpointError, match="not a"):
        load_checkpoint(tmp_path / "other.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.pt")


def test_architecture_mismatch(tiny_run):
    _, res = tiny_run
    with pytest.raises(CheckpointError, match="enable_rab"):
        check_compatible(res["model"], res["model"].config.replace(enable_rab=False))
    check_compatible(res["model"], res["model"].config.replace(lr=1.0))
