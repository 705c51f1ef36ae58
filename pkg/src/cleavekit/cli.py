"""``cleavekit`` command line.

Exit status: 0 success, 1 validation error (bad flags, bad input values),
2 I/O or protocol error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import io
from .core import ALL_LABELS, EM_MODES, ActLabel, FrameObservation, is_time
from .errors import ProtocolError, ValidationError

log = logging.getLogger("cleavekit")

DEFAULT_IOU = 0.65


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _iou_threshold(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("iou threshold must be in (0, 1]")
    return v


def _existing(text: str) -> Path:
    p = Path(text)
    if not p.exists():
        raise argparse.ArgumentTypeError(f"{text} does not exist")
    return p


def _parent(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _run_config(args, skip=("func", "config")) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k in skip:
            continue
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, list):
            v = [str(x) for x in v]
        out[k] = v
    return out


def _apply_nms(frames: list[FrameObservation], threshold: float) -> list[FrameObservation]:
    from .detection import ScoredCandidate, nms

    out = []
    for f in frames:
        kept = nms([ScoredCandidate(m, m.confidence) for m in f.masks], threshold)
        kept_masks = tuple(c.mask for c in sorted(kept, key=lambda c: f.masks.index(c.mask)))
        out.append(FrameObservation(f.frame_index, f.time_hours, f.classifier_label, kept_masks))
    return out


def _load_frames(path, args) -> list[FrameObservation]:
    frames = io.read_frames(path)
    if getattr(args, "nms", False):
        frames = _apply_nms(frames, args.iou_threshold)
    return frames


# -- subcommands ----------------------------------------------------------------------


def cmd_simulate(args, table: dict) -> int:
    from .synth import SynthConfig, generate, relative_samples

    settings = {k: v for k, v in table.items() if k not in ("seed", "out")}
    overrides = {
        "n_embryos": args.n_embryos,
        "label_noise_rate": args.label_noise,
        "t67_confusion_rate": args.t67_confusion,
        "irc_rate": args.irc_rate,
        "seg_noise_rate": args.seg_noise,
    }
    settings.update({k: v for k, v in overrides.items() if v is not None})
    cfg = SynthConfig.from_mapping(settings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = generate(cfg, args.seed)
    for seq, gt in pairs:
        io.write_frames(out / f"{seq.embryo_id}.jsonl", seq.frames)
        io.write_json(out / f"{seq.embryo_id}.gt.json", gt.to_dict())
    io.write_samples(out / "samples.csv", relative_samples(gt for _, gt in pairs))
    io.write_manifest(out / "manifest.json", "simulate", cfg.to_mapping(), args.seed)
    log.info("wrote %d embryos to %s", len(pairs), out)
    return 0


def _em_config(args):
    from .em import EmConfig

    return EmConfig(max_iters=args.max_iters, loglik_tol=args.tol, min_std=args.min_std, seed=args.seed)


def cmd_fit(args, table: dict) -> int:
    from .em import fit

    values, _ = io.read_samples(args.samples)
    mixture, trace = fit(values, _em_config(args))
    io.write_model(_parent(args.out), mixture)
    io.write_manifest(_manifest_path(Path(args.out)), "fit", {**_run_config(args), "iterations": trace.iterations_run, "converged": trace.converged}, args.seed)
    print(f"fitted {len(values)} samples in {trace.iterations_run} iterations (converged={trace.converged})")
    for label, c in mixture.components.items():
        print(f"  {label.value:>3}  mean={c.mean:8.3f}  std={c.std:7.3f}  weight={c.weight:.3f}")
    return 0


def cmd_serve(args, table: dict) -> int:
    from .federation import serve

    models = serve(args.bind, args.strategy, args.quorum, args.rounds, _parent(args.out), args.timeout)
    io.write_manifest(_manifest_path(Path(args.out)), "serve", _run_config(args))
    print(f"completed {len(models)} round(s); global model written to {args.out}")
    return 0


def cmd_client(args, table: dict) -> int:
    from .federation import FederationClient

    values, _ = io.read_samples(args.samples)
    client = FederationClient(args.server, args.client_id, retries=args.retries, backoff=args.backoff, timeout=args.timeout)
    model = client.run(values, _em_config(args))
    io.write_model(_parent(args.out), model, client.round)
    io.write_manifest(_manifest_path(Path(args.out)), "client", _run_config(args), args.seed)
    print(f"received global model for round {client.round}; written to {args.out}")
    return 0


def cmd_track(args, table: dict) -> int:
    from .tracking import track_sequence

    tracker = track_sequence(_load_frames(args.frames, args))
    io.write_json(_parent(args.out), tracker.to_dict())
    io.write_manifest(_manifest_path(Path(args.out)), "track", _run_config(args))
    ids = ", ".join(t.id for t in tracker.active)
    print(f"{len(tracker.tracks)} tracks; active: {ids}; IRC events: {len(tracker.irc_events)}")
    return 0


def cmd_symmetry(args, table: dict) -> int:
    from .symmetry import symmetry_table
    from .tracking import Track

    data = io.read_json(args.tracks)
    tracks = [Track.from_dict(d) for d in data["tracks"]]
    reports = symmetry_table(tracks, every=args.every)
    fh = open(_parent(args.out), "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "cohort_n", "members", "SizeS", "ContS", "sibling_pairs"])
        for r in reports:
            pairs = ";".join(f"{p.a}-{p.b}:{p.size_s:.2f}/{p.cont_s:.2f}" for p in r.pairs)
            w.writerow([r.frame_index, r.n, " ".join(r.members), f"{r.size_s:.2f}", f"{r.cont_s:.2f}", pairs])
    finally:
        if fh is not sys.stdout:
            fh.close()
    if args.out:
        io.write_manifest(_manifest_path(Path(args.out)), "symmetry", _run_config(args))
    return 0


def _read_gt(path):
    from .synth import GroundTruthTimeline

    p = Path(path)
    if p.suffix == ".csv":
        return GroundTruthTimeline(p.stem, io.read_timeline_csv(p))
    return GroundTruthTimeline.from_dict(io.read_json(p))


def cmd_predict(args, table: dict) -> int:
    from .ctp import feedback_update, predict
    from .tracking import track_sequence

    model = io.read_model(args.model)
    gts = list(args.gt or [])
    if gts and len(gts) != len(args.frames):
        raise UsageError("--gt must be given once per --frames file")
    multi = len(args.frames) > 1
    out = Path(args.out)
    if multi:
        out.mkdir(parents=True, exist_ok=True)
    confirmed = []
    for i, path in enumerate(args.frames):
        frames = _load_frames(path, args)
        irc = track_sequence(frames).irc
        gt = _read_gt(gts[i]) if gts else None
        report, cal = predict(frames, model, irc=irc, gt=gt)
        target = out / (Path(path).stem + ".csv") if multi else _parent(out)
        io.write_timeline_csv(target, report.times, report.errors if report.errors is not None else {})
        tp, t2 = report.times[ActLabel.TPNF], report.times[ActLabel.T2]
        if is_time(tp) and is_time(t2):
            confirmed.append((tp, t2))
        print(f"{path}: anchor {cal.anchor.value} offset {cal.offset:+.2f} h, IRC={'yes' if report.irc else 'no'}")
        for label, hours, err in report.rows():
            print(f"  {label:>4}  {hours:>6}  {err}")
    if args.feedback_out:
        io.write_model(_parent(args.feedback_out), feedback_update(model, confirmed))
    io.write_manifest(_manifest_path(out), "predict", _run_config(args))
    return 0


def cmd_report(args, table: dict) -> int:
    from .plotting import plot_mixture

    d = Path(args.dir)
    model_path = Path(args.model) if args.model else None
    if model_path is None:
        for cand in [d / "global_model.json", *sorted(d.glob("*.json"))]:
            if cand.exists() and "modes" in io.read_json(cand):
                model_path = cand
                break
    if model_path is None:
        raise ValidationError(f"no model JSON found in {d}")
    model = io.read_model(model_path)
    samples = None
    if (d / "samples.csv").exists():
        samples, _ = io.read_samples(d / "samples.csv")
    plot_mixture(model, _parent(args.svg), samples)

    errs: dict[ActLabel, list[float]] = {label: [] for label in ALL_LABELS}
    n_reports = 0
    for p in sorted(d.glob("*.csv")):
        if p.name in ("samples.csv", Path(args.csv).name if args.csv else "summary.csv"):
            continue
        with open(p, newline="") as fh:
            header = next(csv.reader(fh), [])
        if "error_pct" not in header:
            continue
        n_reports += 1
        for label, e in io.read_error_column(p).items():
            if e is not None:
                errs[label].append(e)
    summary = Path(args.csv) if args.csv else d / "summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "mean", "std", "mean_error_pct", "n_reports"])
        comps = model.components
        for label in ALL_LABELS:
            c = comps.get(label)
            e = errs[label]
            w.writerow([
                label.value,
                f"{c.mean:.4f}" if c else "",
                f"{c.std:.4f}" if c else "",
                f"{sum(e) / len(e):.2f}" if e else "n/a",
                len(e),
            ])
    io.write_manifest(_manifest_path(summary), "report", _run_config(args))
    print(f"plotted {model_path} to {args.svg}; summarised {n_reports} report(s) in {summary}")
    return 0


# -- parser ------------------------------------------------------------------------------


def _em_flags(p):
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--min-std", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)


def _nms_flags(p):
    p.add_argument("--nms", action="store_true", help="re-run NMS over each frame's masks")
    p.add_argument("--iou-threshold", type=_iou_threshold, default=DEFAULT_IOU)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cleavekit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=_existing, help="TOML file; a [%s] table supplies defaults" % name)
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "generate synthetic embryo sequences with ground truth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-embryos", type=int)
    p.add_argument("--label-noise", type=float)
    p.add_argument("--t67-confusion", type=float)
    p.add_argument("--irc-rate", type=float)
    p.add_argument("--seg-noise", type=float)

    p = add("fit", cmd_fit, "fit the five-mode mixture to relative cleavage times")
    p.add_argument("--samples", type=_existing, required=True)
    p.add_argument("--out", default="model.json")
    _em_flags(p)

    p = add("serve", cmd_serve, "run the aggregation server")
    p.add_argument("--bind", default="127.0.0.1:7070")
    p.add_argument("--quorum", type=int, default=1)
    p.add_argument("--strategy", choices=["weighted", "max"], default="weighted")
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--out", default="global_model.json")
    p.add_argument("--timeout", type=float, default=None)

    p = add("client", cmd_client, "fit locally, upload statistics, receive the global model")
    p.add_argument("--server", required=True)
    p.add_argument("--samples", type=_existing, required=True)
    p.add_argument("--client-id", default=None)
    p.add_argument("--out", default="global_model.json")
    p.add_argument("--retries", type=int, default=5)
    p.add_argument("--backoff", type=float, default=0.25)
    p.add_argument("--timeout", type=float, default=60.0)
    _em_flags(p)

    p = add("track", cmd_track, "lineage-track blastomeres through a frame sequence")
    p.add_argument("--frames", type=_existing, required=True)
    p.add_argument("--out", default="tracks.json")
    _nms_flags(p)

    p = add("symmetry", cmd_symmetry, "SizeS/ContS per cohort from a track dump")
    p.add_argument("--tracks", type=_existing, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--every", type=int, default=1, help="evaluate every N-th frame")

    p = add("predict", cmd_predict, "cleavage timing prediction for frame sequences")
    p.add_argument("--frames", type=_existing, nargs="+", required=True)
    p.add_argument("--model", type=_existing, required=True)
    p.add_argument("--gt", type=_existing, nargs="*")
    p.add_argument("--out", default="report.csv")
    p.add_argument("--feedback-out", default=None, help="write the model re-centred on confirmed tPNf/t2 pairs")
    _nms_flags(p)

    p = add("report", cmd_report, "plot the mixture as SVG and summarise report CSVs")
    p.add_argument("--dir", type=_existing, required=True)
    p.add_argument("--svg", default="dist.svg")
    p.add_argument("--csv", default=None)
    p.add_argument("--model", type=_existing, default=None)
    return parser


def _config_table(argv: Sequence[str], command: str) -> dict:
    if "--config" not in argv:
        return {}
    i = list(argv).index("--config")
    if i + 1 >= len(argv):
        return {}
    path = Path(argv[i + 1])
    if not path.exists():
        return {}
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if isinstance(data.get(command), dict):
        return data[command]
    return {k: v for k, v in data.items() if not isinstance(v, dict)}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("CLEAVEKIT_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        command = next((a for a in argv if not a.startswith("-")), None)
        table = _config_table(argv, command) if command else {}
        if command in parser._subparsers._group_actions[0].choices:
            subp = parser._subparsers._group_actions[0].choices[command]
            dests = {a.dest for a in subp._actions}
            subp.set_defaults(**{k.replace("-", "_"): v for k, v in table.items() if k.replace("-", "_") in dests})
        args = parser.parse_args(argv)
        return args.func(args, table)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ProtocolError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
