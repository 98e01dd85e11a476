"""``daatrack`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 input-data error,
4 self-check failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .checks import SUITES
from .core import CameraModel
from .evaluation import DEFAULT_BIN_EDGES, MetricsAccumulator, astm_check, curves_csv
from .pipeline import run_tracker
from .records import RecordError, eval_frames, read_frames, read_tracks, write_frames
from .sim import NOISE_PROFILES, noise_with_overrides, run_encounter, scenario_from_config
from .tracker import OffsetTracker

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECK = 4

SEED_ENV = "DAATRACK_SEED"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _default_seed() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise CliError(EXIT_CONFIG, f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _meta_path(frames_path: Path) -> Path:
    return frames_path.with_name(frames_path.name + ".meta.json")


def _camera_for(frames_path: Path) -> CameraModel:
    meta = _meta_path(frames_path)
    if not meta.is_file():
        return CameraModel()
    try:
        return CameraModel(**json.loads(meta.read_text())["camera"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_DATA, f"{meta}: bad camera metadata ({exc})") from None


def _open_out(path: Optional[str]):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w", encoding="utf-8", newline="\n")


def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        scenario, overrides = scenario_from_config(
            args.config, seed, template="head_on" if args.head_on else None
        )
        noise = noise_with_overrides(NOISE_PROFILES[args.noise_profile], overrides)
    except FileNotFoundError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except (KeyError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"{args.config}: {exc}") from None
    frames = run_encounter(scenario, noise)
    with _open_out(args.out) as fh:
        write_frames(fh, frames)
    if args.out not in (None, "-"):
        cam = scenario.camera
        meta = {
            "camera": {
                "width_px": cam.width_px, "height_px": cam.height_px, "hfov_deg": cam.hfov_deg,
                "vfov_deg": cam.vfov_deg, "frame_rate_hz": cam.frame_rate_hz,
            },
            "seed": scenario.seed,
            "noise_profile": args.noise_profile,
            "noise": noise.to_dict(),
        }
        _meta_path(Path(args.out)).write_text(json.dumps(meta, indent=2) + "\n")
    return EXIT_OK


def cmd_track(args) -> int:
    path = Path(args.input)
    if not path.is_file():
        raise CliError(EXIT_CONFIG, f"input not found: {path}")
    tracker = OffsetTracker(kappa=args.kappa, max_misses=args.max_misses)
    try:
        tracker.reset()
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    camera = _camera_for(path)
    with open(path, encoding="utf-8") as src, _open_out(args.out) as out:
        try:
            for rec in run_tracker(read_frames(src, camera), tracker):
                out.write(rec.to_json() + "\n")
        except RecordError as exc:
            raise CliError(EXIT_DATA, f"{path}: {exc}") from None
    return EXIT_OK


def parse_bins(text: Optional[str]) -> List[float]:
    """``lo:hi:step`` or a comma-separated edge list."""
    if not text:
        return list(DEFAULT_BIN_EDGES)
    try:
        if ":" in text:
            lo, hi, step = (float(p) for p in text.split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            n = int(round((hi - lo) / step))
            return [lo + k * step for k in range(n + 1)]
        return [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"bad --bins {text!r}: {exc}") from None


def cmd_eval(args) -> int:
    if len(args.frames) != len(args.tracks):
        raise CliError(EXIT_CONFIG, "--frames and --tracks must be given the same number of times")
    try:
        acc = MetricsAccumulator(parse_bins(args.bins))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"bad --bins: {exc}") from None
    for fpath, tpath in zip(args.frames, args.tracks):
        for p in (fpath, tpath):
            if not Path(p).is_file():
                raise CliError(EXIT_CONFIG, f"input not found: {p}")
        with open(fpath, encoding="utf-8") as fh:
            try:
                frames = list(read_frames(fh, _camera_for(Path(fpath))))
            except RecordError as exc:
                raise CliError(EXIT_DATA, f"{fpath}: {exc}") from None
        with open(tpath, encoding="utf-8") as fh:
            try:
                tracks = list(read_tracks(fh))
            except RecordError as exc:
                raise CliError(EXIT_DATA, f"{tpath}: {exc}") from None
        acc.add_stream(eval_frames(frames, tracks))
    report = acc.report()
    report.astm = astm_check(report)
    with _open_out(args.report) as fh:
        fh.write(report.to_json())
    if args.curves:
        Path(args.curves).write_text(curves_csv(report))
    return EXIT_OK


def cmd_check(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        res = SUITES[name]()
        print(f"== {name}: {'PASS' if res.passed else 'FAIL'}")
        for line in res.lines:
            print("  " + line)
        ok &= res.passed
    return EXIT_OK if ok else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="daatrack", description="Detect-and-avoid tracking: simulate, track, evaluate and self-check.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a labelled detection stream (FrameRecord JSONL)")
    p.add_argument("config", help="scenario INI file")
    p.add_argument("--seed", type=int, default=None,
                   help=f"overrides the config seed (default: ${SEED_ENV}, then the config)")
    p.add_argument("--noise-profile", choices=sorted(NOISE_PROFILES), default="calibrated")
    p.add_argument("--head-on", action="store_true",
                   help="use the converging head-on template with the [head_on] section")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="run tracker and state estimation (TrackRecord JSONL)")
    p.add_argument("--in", dest="input", required=True, help="FrameRecord JSONL")
    p.add_argument("--kappa", type=float, default=30.0, help="association gate, px")
    p.add_argument("--max-misses", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score tracks against ground truth")
    p.add_argument("--frames", action="append", required=True, help="FrameRecord JSONL (repeatable)")
    p.add_argument("--tracks", action="append", required=True, help="TrackRecord JSONL (repeatable)")
    p.add_argument("--bins", default=None, help="range bin edges: lo:hi:step or e0,e1,...")
    p.add_argument("--report", default=None, help="JSON report path (default stdout)")
    p.add_argument("--curves", default=None, help="CSV curves path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="run a self-check suite")
    p.add_argument("--suite", choices=sorted(SUITES) + ["all"], required=True)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"daatrack {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
