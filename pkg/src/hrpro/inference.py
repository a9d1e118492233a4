"""Detection assembly: score-refined and boundary-refined proposals merged
through class-wise soft-NMS."""

import numpy as np
import torch

from .data import Detection
from .evaluation import classwise_soft_nms
from .instance import pooled_features, refine_spans
from .proposals import candidates_for_classes, video_level_classes
from .snippet_net import snippet_outputs_np


def raw_detections(record, model, config=None):
    """Detections before soft-NMS, plus the snippet outputs used."""
    config = config or model.config
    out = snippet_outputs_np(model.net, record, model.memory)
    classes = video_level_classes(out.P, config.video_cls_threshold)
    cands = candidates_for_classes(out.P, classes, config.theta_P, config.oic_inflation)
    if not cands:
        return [], out
    if not (config.enable_instance and model.has_instance_stage):
        return [Detection(c.start, c.end, c.label, c.score_oic) for c in cands], out

    heads = model.heads
    X = torch.as_tensor(out.X_e, dtype=torch.float32)
    spans = [(c.start, c.end) for c in cands]
    oic = np.array([c.score_oic for c in cands])
    with torch.no_grad():
        f_s, f_c, f_e = pooled_features(X, spans, config.epsilon)
        p_comp = heads.score(f_s, f_c, f_e).numpy() if config.enable_score else np.zeros(len(cands))
        dets = [Detection(c.start, c.end, c.label, float(o + pc)) for c, o, pc in zip(cands, oic, p_comp)]
        if config.enable_reg:
            d_s, d_e = heads.regress(f_s, f_e)
            rs, re, _ = refine_spans([s for s, _ in spans], [e for _, e in spans], d_s.numpy(), d_e.numpy(), record.T)
            refined = list(zip(rs.tolist(), re.tolist()))
            if config.enable_score:
                p_r = heads.score(*pooled_features(X, refined, config.epsilon)).numpy()
            else:
                p_r = np.zeros(len(cands))
            dets += [Detection(s, e, c.label, float(o + pr)) for (s, e), c, o, pr in zip(refined, cands, oic, p_r)]
    return dets, out


def infer_video(record, model, config=None):
    config = config or model.config
    dets, _ = raw_detections(record, model, config)
    return classwise_soft_nms(dets, config.nms_sigma, config.nms_min_score)


def infer_corpus(records, model, config=None):
    return {r.video_id: infer_video(r, model, config) for r in records}
