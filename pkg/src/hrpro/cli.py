"""``hrpro`` command line.

Every failure exits nonzero after printing one JSON line to stderr:
``{"error": "<CODE>", "message": "..."}``.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import Model, check_compatible, load_checkpoint, save_checkpoint
from .data import Config, open_corpus, resolve_corpus_dir
from .errors import ConfigError, HRProError, StageError
from .evaluation import evaluate_map, parse_thresholds, read_detections_jsonl, write_detections_jsonl
from .synthetic import GenSpec

log = logging.getLogger("hrpro")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(HRProError):
    code = "USAGE_ERROR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _global_flags():
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=argparse.SUPPRESS, help="flat JSON config file")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config / spec seed")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output path (file or directory per subcommand)")
    g.add_argument("--preset", choices=("default", "desk"), default=argparse.SUPPRESS,
                   help="base config before --config is applied (default: plain Config defaults)")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return g


def build_parser():
    common = _global_flags()
    p = _Parser(prog="hrpro", parents=[common], description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen-data", parents=[common], help="write a synthetic corpus")
    s.add_argument("--spec", help="GenSpec JSON (defaults when omitted)")

    s = sub.add_parser("train-snippet", parents=[common], help="stage-1 training")
    s.add_argument("--data", required=True)

    s = sub.add_parser("train-instance", parents=[common], help="stage-2 training on a frozen stage-1 model")
    s.add_argument("--data", required=True)
    s.add_argument("--snippet-ckpt", required=True)

    s = sub.add_parser("infer", parents=[common], help="detections JSONL for a corpus")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--proposals", help="also write ranked proposals JSONL here")

    s = sub.add_parser("eval", parents=[common], help="mAP grid for a detections file")
    s.add_argument("--dets", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--thresholds", default="0.1:0.7:0.1")
    s.add_argument("--report", help="report path (same as --out)")

    s = sub.add_parser("viz", parents=[common], help="SVG timeline of one video")
    s.add_argument("--dets", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--video", required=True)
    s.add_argument("--ckpt", help="draw the P curves of this model")
    s.add_argument("--top-k", type=int, default=20)

    s = sub.add_parser("pipeline", parents=[common], help="gen-data (optional), both stages, infer, eval")
    s.add_argument("--data", required=True, help="corpus root holding train/ and test/")
    s.add_argument("--gen-spec", help="generate the corpus into --data first")
    s.add_argument("--ablate", choices=("table3", "trend"), help="run an ablation matrix instead")
    return p


def _config(args):
    from .pipeline import DESK_OVERRIDES
    base = DESK_OVERRIDES if getattr(args, "preset", "default") == "desk" else {}
    d = dict(base)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a flat JSON object")
        d.update(loaded)
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    return Config.from_dict(d)


def _out(args, default):
    return Path(getattr(args, "out", None) or default)


def _corpus(data, split="test"):
    return open_corpus(resolve_corpus_dir(data, split))


def cmd_gen_data(args):
    from .pipeline import generate_data
    spec = GenSpec.from_json(args.spec) if args.spec else GenSpec()
    if getattr(args, "seed", None) is not None:
        spec = GenSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    out = generate_data(spec, _out(args, "data"))
    print(json.dumps({"out": str(out), "n_videos": spec.n_videos, "n_test_videos": spec.n_test_videos}))


def cmd_train_snippet(args):
    from .snippet_train import train_snippet_stage
    cfg = _config(args)
    corpus = _corpus(args.data, "train")
    out = _out(args, "ckpt")
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "snippet_log.jsonl"
    log_path.unlink(missing_ok=True)
    net, mem, hist = train_snippet_stage(list(corpus), corpus.num_classes, cfg, log_path=log_path)
    path = save_checkpoint(out / "snippet.pt", Model(cfg, corpus.num_classes, corpus.D, net, mem, history=tuple(hist)))
    print(json.dumps({"checkpoint": str(path), "final_loss": hist[-1]["loss"] if hist else None}))


def cmd_train_instance(args):
    from .instance import train_instance_stage
    model = load_checkpoint(args.snippet_ckpt)
    cfg = _config(args) if getattr(args, "config", None) or getattr(args, "seed", None) is not None else model.config
    check_compatible(model, cfg)
    corpus = _corpus(args.data, "train")
    if corpus.D != model.D or corpus.num_classes != model.num_classes:
        raise ConfigError(f"corpus (D={corpus.D}, C={corpus.num_classes}) does not fit the checkpoint "
                          f"(D={model.D}, C={model.num_classes})")
    out = _out(args, "ckpt")
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "instance_log.jsonl"
    log_path.unlink(missing_ok=True)
    heads, hist = train_instance_stage(list(corpus), model.net, model.memory, cfg, log_path=log_path)
    full = Model(cfg, model.num_classes, model.D, model.net, model.memory, heads, model.history + tuple(hist))
    path = save_checkpoint(out / "model.pt", full)
    print(json.dumps({"checkpoint": str(path), "final_loss": hist[-1]["loss"] if hist else None}))


def cmd_infer(args):
    from .inference import infer_corpus
    model = load_checkpoint(args.ckpt)
    cfg = _config(args) if getattr(args, "config", None) else model.config
    corpus = _corpus(args.data, "test")
    dets = infer_corpus(list(corpus), model, cfg)
    out = _out(args, "detections.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_detections_jsonl(out, dets, {r.video_id: r.snippet_duration_sec for r in corpus})
    if args.proposals:
        _write_proposals(args.proposals, corpus, model, cfg)
    print(json.dumps({"detections": str(out), "n": sum(len(v) for v in dets.values())}))


def _write_proposals(path, corpus, model, cfg):
    from .proposals import candidates_for_classes, rank_proposals, video_level_classes, write_proposals_jsonl
    from .snippet_net import snippet_outputs_np
    per_video = {}
    for r in corpus:
        o = snippet_outputs_np(model.net, r, model.memory)
        cands = candidates_for_classes(o.P, video_level_classes(o.P, cfg.video_cls_threshold),
                                       cfg.theta_P, cfg.oic_inflation)
        per_video[r.video_id] = rank_proposals(cands, r.points, o.A, cfg.theta_A, cfg.oic_inflation)
    write_proposals_jsonl(path, per_video)


def cmd_eval(args):
    corpus = _corpus(args.data, "test")
    durations = {r.video_id: r.snippet_duration_sec for r in corpus}
    dets = read_detections_jsonl(args.dets, durations)
    gts = {r.video_id: r.gt_instances or [] for r in corpus}
    try:
        ths = parse_thresholds(args.thresholds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = evaluate_map({v: dets.get(v, []) for v in gts}, gts, ths, corpus.num_classes)
    out = Path(args.report) if args.report else _out(args, "report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps({"report": str(out), "mAP": report["mAP"], "average_mAP": report["average_mAP"]}))


def cmd_viz(args):
    from .viz import timeline_svg
    corpus = _corpus(args.data, "test")
    rec = next((r for r in corpus if r.video_id == args.video), None)
    if rec is None:
        raise UsageError(f"video {args.video} not in corpus")
    dets = read_detections_jsonl(args.dets, {r.video_id: r.snippet_duration_sec for r in corpus}).get(rec.video_id, [])
    P = None
    if args.ckpt:
        from .snippet_net import snippet_outputs_np
        model = load_checkpoint(args.ckpt)
        P = snippet_outputs_np(model.net, rec, model.memory).P
    names = dict(enumerate(corpus.class_names))
    out = _out(args, f"{rec.video_id}.svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(timeline_svg(rec, dets, P, names, args.top_k))
    print(json.dumps({"svg": str(out)}))


def cmd_pipeline(args):
    from .pipeline import ABLATION_ROWS, TREND_ROWS, format_ablation_table, run_ablation, run_pipeline
    cfg = _config(args)
    out = _out(args, "runs/pipeline")
    spec = None
    if args.gen_spec:
        spec = GenSpec.from_json(args.gen_spec)
    if args.ablate:
        if spec is not None:
            from .pipeline import generate_data
            generate_data(spec, args.data)
        rows = ABLATION_ROWS if args.ablate == "table3" else TREND_ROWS
        reports = run_ablation(cfg, args.data, out, rows)
        sys.stdout.write(format_ablation_table(reports))
        return
    report = run_pipeline(cfg, args.data, out, spec)
    print(json.dumps({"out": str(out), "mAP": report["mAP"], "average_mAP": report["average_mAP"]}))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-snippet": cmd_train_snippet,
    "train-instance": cmd_train_instance,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "viz": cmd_viz,
    "pipeline": cmd_pipeline,
}


def _fail(code, message, status, **extra):
    sys.stderr.write(json.dumps({"error": code, **extra, "message": " ".join(str(message).split())}) + "\n")
    return status


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("missing subcommand; one of " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(exc.code, exc, EXIT_USAGE)
    except StageError as exc:
        cause = getattr(exc.cause, "code", type(exc.cause).__name__)
        return _fail(exc.code, exc, EXIT_FAILURE, stage=exc.stage, cause=cause)
    except HRProError as exc:
        return _fail(exc.code, exc, EXIT_FAILURE)
    except (OSError, ValueError, KeyError) as exc:
        return _fail("IO_ERROR" if isinstance(exc, OSError) else "INVALID_INPUT", exc, EXIT_FAILURE)
    except Exception as exc:  # noqa: BLE001, keep the one-line contract for anything unforeseen
        return _fail("INTERNAL_ERROR", f"{type(exc).__name__}: {exc}", EXIT_FAILURE)
    return 0


if __name__ == "__main__":
    sys.exit(main())
