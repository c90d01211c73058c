"""Command-line entry point: ``nlmcflow {synth,estimate,eval,render,loss-landscape}``.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
malformed input, geometry mismatch, failed estimation).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .estimator import DivergenceError, SolverConfig, candidate_grid, estimate_flow, linear_baseline_estimate
from .events_io import EventFormatError, normalize_window, parse_event_file, write_event_file
from .flowfield import FlowFormatError, read_flow_file, write_flow_file
from .loss import LossConfig, Objective
from .synth_eval import GeometryMismatch, PATTERNS, SceneSpec, eval_metrics, read_scene_file, render_flow, synth_scene
from .tiles import TileGrid

log = logging.getLogger("nlmcflow")

USAGE_ERROR = 1
DATA_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _tiles(text: str):
    parts = text.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or NxM, got {text!r}") from None
    if len(vals) == 1:
        vals *= 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected N or NxM with positive counts, got {text!r}")
    return tuple(vals)


def _loss_flags(p: argparse.ArgumentParser) -> None:
    d = LossConfig()
    p.add_argument("--alpha", type=float, default=d.alpha, help="exponential-count saturation factor")
    p.add_argument("--lambda1", type=float, default=d.lambda1, help="weight of the exponential-count term")
    p.add_argument("--lambda2", type=float, default=d.lambda2, help="weight of the smoothness term")
    p.add_argument("--timestamps", choices=("relative", "raw"), default=d.timestamps)


def _solver_flags(p: argparse.ArgumentParser) -> None:
    d = SolverConfig()
    p.add_argument("--tiles", type=_tiles, default=(d.tiles_x, d.tiles_y), help="tile layout, N or NxM")
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--v-max", type=float, default=d.v_max)
    p.add_argument("--v-step", type=float, default=d.v_step)
    p.add_argument("--omega-max", type=float, default=d.omega_max)
    p.add_argument("--omega-step", type=float, default=d.omega_step)
    p.add_argument("--max-iter", type=int, default=d.max_iter)
    p.add_argument("--pivot", choices=("sensor", "tile"), default=d.pivot)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nlmcflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic scene (events + ground-truth flow)")
    d = SceneSpec()
    s.add_argument("--scene", type=Path, help="key=value scene file; explicit flags override it")
    s.add_argument("--pattern", choices=PATTERNS)
    for name in ("vx", "vy", "omega", "cx", "cy", "density", "noise", "contrast-threshold", "edge-x"):
        s.add_argument(f"--{name}", type=float)
    for name in ("width", "height", "window-us", "edge-dash", "bar-spacing", "n-dots"):
        s.add_argument(f"--{name}", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    s.set_defaults(scene_defaults=d)

    e = sub.add_parser("estimate", help="estimate dense flow from an event file")
    e.add_argument("events", type=Path)
    e.add_argument("-o", "--output", type=Path, required=True, help="flow file to write")
    e.add_argument("--linear", action="store_true", help="linear motion baseline (rotation frozen at 0)")
    e.add_argument("--render", type=Path, help="also write a colour-wheel PPM")
    e.add_argument("--loss-csv", type=Path, help="also write the loss breakdown as CSV")
    _loss_flags(e)
    _solver_flags(e)

    v = sub.add_parser("eval", help="compare a flow file against ground truth")
    v.add_argument("pred", type=Path)
    v.add_argument("gt", type=Path)
    v.add_argument("-o", "--output", type=Path, help="report CSV (default: stdout)")

    r = sub.add_parser("render", help="render a flow file as PPM")
    r.add_argument("flow", type=Path)
    r.add_argument("-o", "--output", type=Path, required=True)

    ll = sub.add_parser("loss-landscape", help="loss over a grid of uniform motion parameters")
    ll.add_argument("events", type=Path)
    ll.add_argument("-o", "--output", type=Path, required=True)
    ll.add_argument("--linear", action="store_true", help="only omega = 0")
    _loss_flags(ll)
    _solver_flags(ll)
    return parser


def _loss_config(args) -> LossConfig:
    return LossConfig(alpha=args.alpha, lambda1=args.lambda1, lambda2=args.lambda2, timestamps=args.timestamps)


def _solver_config(args) -> SolverConfig:
    return SolverConfig(tiles_x=args.tiles[0], tiles_y=args.tiles[1], seed=args.seed, v_max=args.v_max,
                        v_step=args.v_step, omega_max=args.omega_max, omega_step=args.omega_step,
                        max_iter=args.max_iter, pivot=args.pivot, linear=args.linear)


def _write_run_json(path: Path, record: Dict) -> None:
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")


def cmd_synth(args) -> int:
    spec = read_scene_file(args.scene) if args.scene else args.scene_defaults
    overrides = {}
    for key in ("pattern", "vx", "vy", "omega", "cx", "cy", "density", "noise", "contrast_threshold", "edge_x",
                "width", "height", "window_us", "edge_dash", "bar_spacing", "n_dots", "seed"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    spec = replace(spec, **overrides)
    vol, gt = synth_scene(spec)
    out: Path = args.output
    out.mkdir(parents=True, exist_ok=True)
    write_event_file(vol, out / "events.csv")
    write_flow_file(gt, out / "gt.txt")
    _write_run_json(out / "run.json", {"command": "synth", "scene": spec.to_dict(), "n_events": len(vol)})
    log.info("wrote %d events to %s", len(vol), out)
    return 0


def cmd_estimate(args) -> int:
    vol = parse_event_file(args.events)
    lc, sc = _loss_config(args), _solver_config(args)
    run = linear_baseline_estimate if sc.linear else estimate_flow
    result = run(vol, sc, lc)
    write_flow_file(result.flow, args.output)
    if args.render:
        render_flow(result.flow, args.render)
    if args.loss_csv:
        b = result.loss
        args.loss_csv.write_text("l_at_fw,l_at_bw,l_ec_fw,l_ec_bw,l_smooth,total\n"
                                 + ",".join(f"{x:.9g}" for x in (b.l_at_fw, b.l_at_bw, b.l_ec_fw, b.l_ec_bw,
                                                                 b.l_smooth, b.total)) + "\n")
    _write_run_json(args.output.with_name(args.output.name + ".run.json"), {
        "command": "estimate", "events": str(args.events), "n_events": len(vol),
        "loss_config": asdict(lc), "solver_config": asdict(sc),
        "theta": np.round(result.grid.theta, 9).tolist(), "tile_valid": result.grid.valid.tolist(),
        "loss_total": round(result.loss.total, 12),
    })
    log.info("loss %.6f over %d tiles", result.loss.total, result.grid.n_tiles)
    return 0


def cmd_eval(args) -> int:
    report = eval_metrics(read_flow_file(args.pred), read_flow_file(args.gt))
    text = "aee,ae,out_pct,n_valid\n" + report.csv_line() + "\n"
    if args.output:
        args.output.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_render(args) -> int:
    render_flow(read_flow_file(args.flow), args.output)
    return 0


def cmd_loss_landscape(args) -> int:
    vol = normalize_window(parse_event_file(args.events))
    lc, sc = _loss_config(args), _solver_config(args)
    grid = TileGrid.create(vol.width, vol.height, sc.tiles_x, sc.tiles_y, sc.pivot)
    obj = Objective(vol, grid, lc)
    cand = candidate_grid(sc)
    cand = cand[np.lexsort((cand[:, 2], cand[:, 1], cand[:, 0]))]
    lines = ["vx,vy,omega,l_at,l_ec,l_smooth,total"]
    for row in cand:
        b = obj.breakdown(np.broadcast_to(row, grid.theta.shape))
        vals = (row[0], row[1], row[2], b.l_at_fw + b.l_at_bw, b.l_ec_fw + b.l_ec_bw, b.l_smooth, b.total)
        lines.append(",".join(f"{x:.9g}" for x in vals))
    args.output.write_text("\n".join(lines) + "\n")
    _write_run_json(args.output.with_name(args.output.name + ".run.json"), {
        "command": "loss-landscape", "events": str(args.events), "loss_config": asdict(lc),
        "solver_config": asdict(sc), "n_candidates": int(len(cand))})
    return 0


COMMANDS = {"synth": cmd_synth, "estimate": cmd_estimate, "eval": cmd_eval, "render": cmd_render,
            "loss-landscape": cmd_loss_landscape}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (EventFormatError, FlowFormatError, GeometryMismatch, DivergenceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
