"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..eapt import run_eapt
from ..embedspace import Projector, ToyDualEncoder, Vocabulary, semantic_verification
from ..errormap import import_error_map, load_image, save_image
from ..errors import InvalidInput, ParseError
from ..pipeline import PipelineConfig, defend, detect_frames, frame_error_maps, load_config
from ..purifier import apply_gray_mask, build_mask, save_mask
from ..sentinel import VerdictClass
from . import fixtures
from .evaluation import EvalRecord, LabeledMetrics, calibrate, default_grid, evaluate
from .report import format_distributions, format_report, read_manifest, read_report_records, report_rows

log = logging.getLogger("vlmguard")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DEFAULT_PROMPT = "describe the driving scene and the safe action"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    g = p.add_argument_group("config overrides")
    for key in PipelineConfig().to_flat():
        g.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="V")


def _config(args) -> PipelineConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return load_config(args.config, overrides)


def _expert(args, cfg: PipelineConfig):
    enc = ToyDualEncoder(seed=args.encoder_seed)
    vocab = Vocabulary.load(args.vocab) if args.vocab else Vocabulary.synthetic(dim=enc.dim, seed=args.encoder_seed)
    proj = Projector.load(args.projector) if args.projector else Projector.identity(enc.dim)
    return enc, vocab, proj


def _add_expert_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prompt", default=DEFAULT_PROMPT)
    p.add_argument("--vocab", help="vocabulary file (token<TAB>v1,v2,...)")
    p.add_argument("--projector", help="affine projector file")
    p.add_argument("--encoder-seed", type=int, default=0)


# -- subcommands -------------------------------------------------------------

def cmd_gen_fixtures(args) -> int:
    suite = fixtures.make_suite(args.n_clean, args.n_global, args.n_patch, seed=args.seed, size=args.size)
    manifest = fixtures.write_suite(suite, args.out)
    print(f"wrote {len(suite)} fixtures and {manifest}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args)
    if args.loss_map:
        maps = [import_error_map(p) for p in args.loss_map]
        names = args.loss_map
    else:
        if not args.images:
            raise UsageError("detect needs images or --loss-map")
        frames = [load_image(p) for p in args.images]
        maps = frame_error_maps(frames, cfg)
        names = args.images
    if args.sequence:
        verdict, rep = detect_frames(maps, cfg)
        _print_verdict(f"sequence[{len(maps)}] rep={names[rep]}", verdict)
    else:
        for name, emap in zip(names, maps):
            verdict, _ = detect_frames([emap], cfg)
            _print_verdict(name, verdict)
    return EXIT_OK


def _print_verdict(name, verdict) -> None:
    m = verdict.metrics
    print(f"{name}\t{verdict.cls.value}\tm_anom={m.m_anom:.6g}\th_norm={m.h_norm:.6g}"
          f"\tc_local={m.c_local:.6g}\tc_enh={m.c_enh:.6g}\tscore={verdict.attack_score:.6g}")


def cmd_purify(args) -> int:
    cfg = _config(args)
    image = load_image(args.image)
    maps = frame_error_maps([image], cfg)
    verdict, _ = detect_frames(maps, cfg)
    _print_verdict(args.image, verdict)
    if not verdict.metrics.largest_component or (verdict.cls is not VerdictClass.LOCAL and not args.force):
        save_image(image, args.out)
        print("no local attack detected; image written unchanged")
        return EXIT_OK
    mask = build_mask(verdict.metrics.largest_component, cfg.grid_for(image), cfg.dilation)
    save_image(apply_gray_mask(image, mask, cfg.gray), args.out)
    if args.mask_out:
        save_mask(mask, args.mask_out)
    print(f"masked {int(mask.sum())} pixels -> {args.out}")
    return EXIT_OK


def cmd_eapt(args) -> int:
    cfg = _config(args)
    enc, vocab, proj = _expert(args, cfg)
    image = load_image(args.image)
    v_sem = semantic_verification(image, args.prompt, enc)
    print(f"v_sem={v_sem:.6f} tau_sem={cfg.eapt.tau_sem}")
    if v_sem >= cfg.eapt.tau_sem and not args.force:
        print(args.prompt)
        return EXIT_OK
    robust, trace = run_eapt(image, args.prompt, enc, proj, vocab, cfg.eapt)
    if args.trace_out:
        trace.write_csv(args.trace_out)
    print(robust.composed)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    enc, vocab, proj = _expert(args, cfg)
    entries = read_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outcomes = []
    for entry in entries:
        image = load_image(entry.path)
        outcome = defend([image], args.prompt, cfg, enc, vocab, proj)
        outcomes.append(outcome)
        if args.save_purified and outcome.purified_image is not None:
            save_image(outcome.purified_image, out_dir / f"{entry.id}_purified.png")
        log.info("%s %s", entry.id, outcome.verdict.cls.value)
    ids = [e.id for e in entries]
    truths = [e.truth for e in entries]
    records = [EvalRecord(i, t, o.verdict.cls, o.verdict.attack_score) for i, t, o in zip(ids, truths, outcomes)]
    summary = evaluate(records)
    (out_dir / "report.csv").write_text(format_report(report_rows(ids, truths, outcomes), summary), encoding="utf-8")
    (out_dir / "distributions.csv").write_text(format_distributions(ids, truths, outcomes), encoding="utf-8")
    print("\n".join(summary.summary_lines()))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    summary = evaluate(read_report_records(args.report))
    print("\n".join(summary.summary_lines()))
    return EXIT_OK


def _parse_axis(text: str | None):
    if text is None:
        return None
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            return list(np.linspace(float(lo), float(hi), int(n)))
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"bad grid axis {text!r}; use 'a,b,c' or 'lo:hi:n'") from None


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    entries = read_manifest(args.manifest)
    samples = []
    for entry in entries:
        maps = frame_error_maps([load_image(entry.path)], cfg)
        verdict, _ = detect_frames(maps, cfg)
        samples.append(LabeledMetrics(entry.id, entry.truth, verdict.metrics))
    axes = {"t_s": _parse_axis(args.grid_ts), "t_cc1": _parse_axis(args.grid_cc1), "t_cc2": _parse_axis(args.grid_cc2)}
    grid = None
    if any(v is not None for v in axes.values()):
        grid = {k: (v if v is not None else default_grid(samples)[k]) for k, v in axes.items()}
    th = calibrate(samples, grid, cfg.thresholds)
    tuned = cfg.replace(t_s=th.t_s, t_cc1=th.t_cc1, t_cc2=th.t_cc2)
    text = tuned.dumps()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vlmguard", description="Adversarial-input triage, purification and prompt tuning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-fixtures", help="write a synthetic fixture suite and manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--n-clean", type=int, default=70)
    p.add_argument("--n-global", type=int, default=65)
    p.add_argument("--n-patch", type=int, default=65)
    p.add_argument("--size", type=int, default=fixtures.IMAGE_SIZE)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("detect", help="classify images (or imported loss maps)")
    p.add_argument("images", nargs="*")
    p.add_argument("--loss-map", nargs="+", help="loss-map files instead of images")
    p.add_argument("--sequence", action="store_true", help="treat inputs as frames of one clip")
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("purify", help="mask a detected patch with gray")
    p.add_argument("image")
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out")
    p.add_argument("--force", action="store_true", help="mask the largest component even if not LocalAttack")
    _add_config_flags(p)
    p.set_defaults(func=cmd_purify)

    p = sub.add_parser("eapt", help="generate a robust prompt for an image")
    p.add_argument("image")
    p.add_argument("--trace-out")
    p.add_argument("--force", action="store_true", help="tune even when the semantic gate passes")
    _add_expert_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eapt)

    p = sub.add_parser("run", help="full defense over a manifest, with report")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--save-purified", action="store_true")
    _add_expert_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="recompute summary metrics from a report CSV")
    p.add_argument("report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("calibrate", help="grid-search gate thresholds on a labelled manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write the tuned config here")
    p.add_argument("--grid-ts")
    p.add_argument("--grid-cc1")
    p.add_argument("--grid-cc2")
    _add_config_flags(p)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"vlmguard: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, InvalidInput, OSError) as exc:
        print(f"vlmguard: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
