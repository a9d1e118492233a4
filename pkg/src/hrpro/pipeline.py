"""Two-stage pipeline runner, manifest writing and the ablation matrix."""

import hashlib
import json
import logging
import time
from pathlib import Path

from .checkpoint import Model, save_checkpoint
from .data import Config, open_corpus, resolve_corpus_dir, save_corpus
from .errors import HRProError, StageError
from .evaluation import evaluate_map, write_detections_jsonl
from .inference import infer_corpus
from .instance import train_instance_stage
from .snippet_train import train_snippet_stage
from .synthetic import generate_corpus, split_corpus

log = logging.getLogger(__name__)

# laptop-scale optimiser settings; the remaining fields keep their defaults
DESK_OVERRIDES = {"lr": 2e-3, "batch_size": 4, "head_hidden": 64}

# one row per ablation setting, expressed as config overrides
ABLATION_ROWS = {
    "full": {},
    "no_contra": {"lambda1": 0.0},
    "no_rab": {"enable_rab": False},
    "no_reg": {"enable_reg": False},
    "no_score": {"enable_score": False},
    "no_rp": {"enable_rp_matching": False},
    "no_np": {"enable_np": False},
}

# cumulative progression from the snippet-only baseline to the full model
TREND_ROWS = {
    "baseline": {"enable_contra": False, "enable_rab": False, "enable_instance": False},
    "+contra": {"enable_rab": False, "enable_instance": False},
    "+contra+rab": {"enable_instance": False},
    "full": {},
}


def desk_config(**overrides):
    return Config.from_dict({**DESK_OVERRIDES, **overrides})


def config_hash(config):
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def data_digest(*dirs):
    h = hashlib.sha256()
    for d in dirs:
        d = Path(d)
        for f in sorted(p for p in d.rglob("*") if p.is_file()):
            h.update(str(f.relative_to(d)).encode())
            h.update(f.read_bytes())
    return h.hexdigest()[:16]


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except (HRProError, AssertionError, ValueError, RuntimeError) as exc:
        raise StageError(name, exc) from exc


def run_experiment(train, test, num_classes, config, work_dir=None):
    """Train both stages in memory and evaluate on ``test``.

    Returns a dict holding the model, the per-video detections and the report.
    """
    work_dir = Path(work_dir) if work_dir is not None else None
    logs = {}
    if work_dir is not None:
        work_dir.mkdir(parents=True, exist_ok=True)
        for k in ("snippet", "instance"):
            logs[k] = work_dir / f"{k}_log.jsonl"
            logs[k].unlink(missing_ok=True)
    net, mem, hist1 = _stage("train-snippet", train_snippet_stage, train, num_classes, config,
                             log_path=logs.get("snippet"))
    model = Model(config, num_classes, train[0].D, net, mem, history=tuple(hist1))
    hist2 = []
    if config.enable_instance:
        heads, hist2 = _stage("train-instance", train_instance_stage, train, net, mem, config,
                              log_path=logs.get("instance"))
        model.heads = heads
        model.history = tuple(hist1) + tuple(hist2)
    dets = _stage("infer", infer_corpus, test, model, config)
    report = _stage("eval", evaluate_map, dets, {r.video_id: r.gt_instances for r in test},
                    config.eval_thresholds, num_classes)
    return {"model": model, "detections": dets, "report": report,
            "snippet_history": hist1, "instance_history": hist2}


def _load_splits(data_dir):
    train = open_corpus(resolve_corpus_dir(data_dir, "train"))
    test = open_corpus(resolve_corpus_dir(data_dir, "test"))
    if test.num_classes != train.num_classes:
        raise StageError("load", HRProError(f"train has {train.num_classes} classes, test has {test.num_classes}"))
    return train, test


def generate_data(gen_spec, out_dir):
    """Write a synthetic corpus; ``train/`` and ``test/`` when ``gen_spec`` asks for a split."""
    out_dir = Path(out_dir)
    records = generate_corpus(gen_spec)
    names = [f"class_{c}" for c in range(gen_spec.n_classes)]
    if gen_spec.n_test_videos:
        train, test = split_corpus(records, gen_spec.n_test_videos)
        save_corpus(train, out_dir / "train", gen_spec.n_classes, names)
        save_corpus(test, out_dir / "test", gen_spec.n_classes, names)
    else:
        save_corpus(records, out_dir, gen_spec.n_classes, names)
    (out_dir / "gen_spec.json").write_text(json.dumps(gen_spec.to_dict(), indent=2))
    return out_dir


def run_pipeline(config, data_dir, out_dir, gen_spec=None):
    """gen-data (optional) -> train-snippet -> train-instance -> infer -> eval.

    Every artefact lands in ``out_dir``; a failing stage raises
    :class:`StageError` and leaves earlier outputs in place.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if gen_spec is not None:
        _stage("gen-data", generate_data, gen_spec, data_dir)
    train, test = _stage("load", _load_splits, data_dir)
    res = run_experiment(list(train), list(test), train.num_classes, config, out_dir)
    model = res["model"]

    ckpt = save_checkpoint(out_dir / "model.pt", model)
    durations = {r.video_id: r.snippet_duration_sec for r in test}
    dets_path = out_dir / "detections.jsonl"
    write_detections_jsonl(dets_path, res["detections"], durations)
    report = res["report"]
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))

    manifest = {
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "seed": config.seed,
        "data_dir": str(data_dir),
        "data_digest": data_digest(resolve_corpus_dir(data_dir, "train"), resolve_corpus_dir(data_dir, "test")),
        "gen_spec": None if gen_spec is None else gen_spec.to_dict(),
        "checkpoint": str(ckpt),
        "detections": str(dets_path),
        "report": str(out_dir / "report.json"),
        "mAP": report["mAP"],
        "average_mAP": report["average_mAP"],
        "runtime_sec": round(time.perf_counter() - t0, 2),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return report


def run_ablation(config, data_dir, out_dir, rows=None):
    """Run each row's config on the same data; returns {row: report} and writes a table."""
    rows = ABLATION_ROWS if rows is None else rows
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = _stage("load", _load_splits, data_dir)
    reports = {}
    for name, overrides in rows.items():
        cfg = config.replace(**overrides)
        log.info("ablation row %s", name)
        reports[name] = run_experiment(list(train), list(test), train.num_classes, cfg, out_dir / name)["report"]
    (out_dir / "ablation.json").write_text(json.dumps(reports, indent=2, sort_keys=True))
    (out_dir / "ablation.md").write_text(format_ablation_table(reports))
    return reports


def format_ablation_table(reports):
    """Markdown table: mAP per threshold plus the 0.1:0.7 average, and gain over the first row."""
    names = list(reports)
    ths = list(reports[names[0]]["mAP"])
    head = "| setting | " + " | ".join(ths) + " | AVG | gain |"
    lines = [head, "|" + "---|" * (len(ths) + 3)]
    ref = reports[names[0]]["AVG(0.1:0.7)"]
    for n in names:
        r = reports[n]
        cells = [f"{100 * r['mAP'][t]:.1f}" for t in ths]
        avg = r["AVG(0.1:0.7)"]
        lines.append(f"| {n} | " + " | ".join(cells) + f" | {100 * avg:.1f} | {100 * (avg - ref):+.1f} |")
    return "\n".join(lines) + "\n"
