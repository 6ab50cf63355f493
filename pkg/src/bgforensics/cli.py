"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Diagnostics go to stderr; machine output goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from functools import partial
from pathlib import Path

from . import __version__
from .attacks import AttackChain, apply_chain
from .errors import ForensicsError, NumericError
from .pipeline import features as feature_store
from .pipeline.detector import DETECTORS, Detector
from .pipeline.manifest import DatasetManifest, build_manifest, synth_dataset
from .pipeline.report import emit_report, read_report, render_csv, render_json
from .pipeline.scenario import (
    EvalReport,
    ScenarioConfig,
    evaluate,
    run_scenario,
    select_frames,
    train_detector,
)
from .pipeline.split import SplitPlan
from .raster import load_image, save_image

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
HELP_WIDTH = 88

log = logging.getLogger("bgforensics")
_formatter = partial(argparse.HelpFormatter, width=HELP_WIDTH)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text: str):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 320x180, got {text!r}")
    return w, h


def _rule(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected SEGMENT=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    return key, value


def _tag_rule(text: str):
    if ":" not in text or "=" not in text:
        raise argparse.ArgumentTypeError(f"expected TAG:SEGMENT=VALUE, got {text!r}")
    tag, rest = text.split(":", 1)
    seg, value = rest.split("=", 1)
    return tag, seg, value


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=None, help="random seed (default: config value or 0)")
    g.add_argument("--threads", type=int, default=None,
                   help="worker threads for featurization (default: available CPUs)")
    g.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    return common


def build_parser() -> Parser:
    common = _common()
    parser = Parser(prog="bgforensics", formatter_class=_formatter,
                    description="Real vs virtual video-call background detection toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                              formatter_class=_formatter)

    p = add("synth", "Generate the procedural real/virtual frame set with a manifest.")
    p.add_argument("--n", type=int, required=True, help="frames per class")
    p.add_argument("--size", type=_size, default=(320, 180), help="frame size WxH (default: 320x180)")
    p.add_argument("--out", required=True, help="output directory")

    p = add("manifest", "Scan image directories into a JSONL manifest.")
    p.add_argument("--root", action="append", required=True, help="directory to scan (repeatable)")
    p.add_argument("--label", action="append", type=_rule, default=None, metavar="SEGMENT=LABEL",
                   help="path segment that assigns a label (default: real=real, virtual=virtual)")
    p.add_argument("--tag", action="append", type=_tag_rule, default=None, metavar="TAG:SEGMENT=VALUE",
                   help="path segment that assigns a tag value (default: software and lighting names)")
    p.add_argument("--base", default=None,
                   help="store paths relative to this directory (default: the manifest's directory)")
    p.add_argument("--out", required=True, help="manifest file to write")

    p = add("featurize", "Extract six co-mat tensors or CRSPAM1372 rows for a manifest.")
    p.add_argument("--manifest", required=True, help="JSONL manifest")
    p.add_argument("--scheme", required=True, choices=feature_store.SCHEMES, help="feature scheme")
    p.add_argument("--attack", default=None, help="attack chain JSON applied before extraction")
    p.add_argument("--out", required=True, help="store directory, or a .csv file for crspam")

    p = add("attack", "Apply an attack chain to one image.")
    p.add_argument("--in", dest="input", required=True, help="input image (PNG, JPEG or PPM)")
    p.add_argument("--spec", required=True, help='attack JSON, e.g. \'{"kind":"median","k":3}\' or a list')
    p.add_argument("--out", required=True, help="output image")
    p.add_argument("--format", choices=("png", "ppm"), default=None,
                   help="output format (default: from the file suffix)")

    p = add("train", "Train a detector on the training split of a manifest.")
    p.add_argument("--manifest", default=None, help="JSONL manifest (default: from --config)")
    p.add_argument("--config", default=None, help="scenario config JSON supplying training knobs")
    p.add_argument("--detector", choices=DETECTORS, default=None, help="overrides the config feature_scheme")
    p.add_argument("--out", required=True, help="detector directory to write")

    p = add("eval", "Score a trained detector on clean and attacked frames.")
    p.add_argument("--manifest", required=True, help="JSONL manifest")
    p.add_argument("--model", required=True, help="detector directory written by train")
    p.add_argument("--attack", action="append", default=[], help="attack chain JSON (repeatable)")
    p.add_argument("--split", default=None, help="split JSON written by train (default: whole manifest)")
    p.add_argument("--name", default="eval", help="scenario id in the report (default: eval)")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="report format")
    p.add_argument("--out", default=None, help="report file (default: stdout)")

    p = add("scenario", "Run a full scenario from a JSON config and write its report.")
    p.add_argument("--config", required=True, help="scenario config JSON")
    p.add_argument("--manifest", default=None, help="JSONL manifest (default: from the config)")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="report format")
    p.add_argument("--out", required=True, help="report file to write")

    p = add("report", "Re-render a JSON report as JSON or CSV.")
    p.add_argument("--in", dest="input", required=True, help="report_v1 JSON file")
    p.add_argument("--format", choices=("json", "csv"), default="csv", help="output format (default: csv)")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    return parser


def _threads(args) -> int:
    return args.threads if args.threads and args.threads > 0 else feature_store.default_threads()


def _announce_seed(seed: int) -> int:
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _manifest(path) -> DatasetManifest:
    if path is None:
        raise UsageError("a manifest is required (flag or config)")
    return DatasetManifest.read(path)


def _write_text(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_synth(args):
    seed = _announce_seed(args.seed if args.seed is not None else 0)
    manifest = synth_dataset(args.n, args.size, seed, args.out)
    log.info("wrote %d frames to %s", len(manifest), args.out)


def cmd_manifest(args):
    _announce_seed(args.seed if args.seed is not None else 0)
    labels = dict(args.label) if args.label else None
    tags = None
    if args.tag:
        tags = {}
        for tag, seg, value in args.tag:
            tags.setdefault(tag, {})[seg] = value
    out = Path(args.out)
    manifest = build_manifest(args.root, labels, tags, args.base or out.resolve().parent)
    manifest.write(out)
    log.info("wrote %d entries to %s", len(manifest), out)


def cmd_featurize(args):
    _announce_seed(args.seed if args.seed is not None else 0)
    manifest = _manifest(args.manifest)
    attack = AttackChain.parse(args.attack) if args.attack else None
    feature_store.featurize(manifest, args.scheme, attack, args.out, _threads(args))


def cmd_attack(args):
    seed = _announce_seed(args.seed if args.seed is not None else 0)
    chain = AttackChain.parse(args.spec)
    img = apply_chain(load_image(args.input), chain, salt=seed)
    fmt = args.format or ("ppm" if Path(args.out).suffix.lower() == ".ppm" else "png")
    save_image(img, args.out, fmt)


def _config(args) -> ScenarioConfig:
    if getattr(args, "config", None):
        cfg = ScenarioConfig.load(args.config)
    else:
        cfg = ScenarioConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args):
    cfg = _config(args)
    if args.detector:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "feature_scheme": args.detector})
    _announce_seed(cfg.seed)
    manifest = _manifest(args.manifest or cfg.manifest)
    split, train_idx, _ = select_frames(cfg, manifest)
    detector = train_detector(cfg, manifest, train_idx, threads=_threads(args), callback=_epoch_logger())
    detector.save(args.out)
    split.write(Path(args.out) / "split.json")


def cmd_eval(args):
    _announce_seed(args.seed if args.seed is not None else 0)
    manifest = _manifest(args.manifest)
    detector = Detector.load(args.model)
    if args.split:
        split = SplitPlan.from_dict(json.loads(Path(args.split).read_text()))
        split.check(len(manifest))
        indices = list(split.test)
    else:
        indices = list(range(len(manifest)))
    chains = [AttackChain.parse(a) for a in args.attack]
    rows = evaluate(detector, manifest, indices, chains, args.name, _threads(args))
    report = EvalReport(args.name, rows, {"model": str(args.model), "attacks": [c.to_json() for c in chains]},
                        args.seed if args.seed is not None else 0)
    _write_text(render_json(report) if args.format == "json" else render_csv(report), args.out)


def cmd_scenario(args):
    cfg = _config(args)
    _announce_seed(cfg.seed)
    manifest = _manifest(args.manifest or cfg.manifest)
    report = run_scenario(cfg, manifest, threads=_threads(args), callback=_epoch_logger())
    emit_report(report, args.out, args.format)


def cmd_report(args):
    _announce_seed(args.seed if args.seed is not None else 0)
    report = read_report(args.input)
    _write_text(render_json(report) if args.format == "json" else render_csv(report), args.out)


def _epoch_logger():
    def cb(epoch, history):
        log.info("epoch %d: loss %.4f, accuracy %.4f", epoch + 1, history.loss[-1], history.accuracy[-1])
    return cb


COMMANDS = {
    "synth": cmd_synth, "manifest": cmd_manifest, "featurize": cmd_featurize, "attack": cmd_attack,
    "train": cmd_train, "eval": cmd_eval, "scenario": cmd_scenario, "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bgforensics {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"bgforensics: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ForensicsError as exc:
        print(f"bgforensics: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"bgforensics: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"bgforensics: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
