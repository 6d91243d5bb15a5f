"""Command-line entry point.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime or
degeneracy failure, 3 unreadable or unwritable files.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .baseline import DEFAULT_BIN, event_rate, zncc_offset
from .camera import CameraModel
from .errors import ConfigError, EventFileError, EvsyncError
from .events import load_events
from .geometry import RigidExtrinsics
from .pipeline import PreprocessConfig, evaluate, preprocess
from .simulator import GroundTruth, ScenarioConfig, make_scenario
from .sweep import SweepProtocol, default_workers, run_sweep
from .sync import SearchConfig, read_report, sync_known_extrinsics, sync_unknown_extrinsics, write_curve, write_report
from .trajectory import load_trajectory, save_trajectory


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise EventFileError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EventFileError(f"cannot create {out}: {exc}") from exc
    return out


def _write_json(path: Path, data: dict) -> None:
    try:
        path.write_text(json.dumps(data, indent=2) + "\n")
    except OSError as exc:
        raise EventFileError(f"cannot write {path}: {exc}") from exc


def _pipeline_configs(cfg: dict, seed: int | None) -> tuple[SearchConfig, PreprocessConfig]:
    unknown = set(cfg) - {"search", "preprocess", "bin_width"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    search = SearchConfig.from_dict(cfg.get("search", {}))
    if seed is not None:
        search = replace(search, seed=seed)
    return search, PreprocessConfig.from_dict(cfg.get("preprocess", {}))


def _load_pair(args):
    cam1, cam2 = (CameraModel.load(p) for p in args.cameras)
    return load_events(args.events1, cam1), load_events(args.events2, cam2)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> dict:
    d = _read_json(args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    cfg = ScenarioConfig.from_dict(d)
    scn = make_scenario(cfg, _out_dir(args.out))
    print(f"wrote scenario to {args.out} ({len(scn.stream1)} + {len(scn.stream2)} events)")
    return _read_json(Path(args.out) / scn.files["manifest"])


def cmd_sync(args) -> dict:
    search, pre = _pipeline_configs(_read_json(args.config), args.seed)
    s1, s2 = _load_pair(args)
    out = _out_dir(args.out)
    traj1, st1 = preprocess(s1, pre)
    traj2, st2 = preprocess(s2, pre)
    if args.extrinsics:
        ext = RigidExtrinsics.from_dict(_read_json(args.extrinsics))
        res = sync_known_extrinsics(traj1, traj2, s1.camera, s2.camera, ext, search)
    else:
        res = sync_unknown_extrinsics(traj1, traj2, s1.camera, s2.camera, search)
    res.runtime.update({f"cam1_{k}": v for k, v in st1.pop("runtime").items()})
    res.runtime.update({f"cam2_{k}": v for k, v in st2.pop("runtime").items()})
    rep = write_report(res, out / "report.json", extra={"preprocess": {"camera1": st1, "camera2": st2}})
    write_curve(res, out / "curve.csv")
    save_trajectory(traj1, out / "trajectory1.csv")
    save_trajectory(traj2, out / "trajectory2.csv")
    print(f"{res.mode}: t_d* = {res.t_d_star} us ({res.t_d_star / 1000:.3f} ms), d_avg = {res.d_avg_min:.4f} px")
    return rep


def cmd_baseline(args) -> dict:
    cfg = _read_json(args.config)
    search, _ = _pipeline_configs(cfg, None)
    bin_width = int(cfg.get("bin_width", DEFAULT_BIN))
    s1, s2 = _load_pair(args)
    sig1 = event_rate(s1, bin_width, t0=0)
    sig2 = event_rate(s2, bin_width, t0=0)
    offset, score = zncc_offset(sig1, sig2, search.t_begin, search.t_end)
    rep = {
        "mode": "zncc-baseline",
        "t_d_star_us": offset,
        "t_d_star_ms": offset / 1000.0,
        "zncc": score,
        "bin_width_us": bin_width,
        "config": {"t_begin": search.t_begin, "t_end": search.t_end},
    }
    _write_json(_out_dir(args.out) / "baseline.json", rep)
    print(f"zncc: offset = {offset} us, score = {score:.4f}")
    return rep


def cmd_evaluate(args) -> dict:
    report = read_report(args.report)
    truth = GroundTruth.from_dict(_read_json(args.ground_truth))
    traj1 = traj2 = None
    if args.trajectories:
        traj1 = load_trajectory(args.trajectories[0], truth.camera1)
        traj2 = load_trajectory(args.trajectories[1], truth.camera2)
    ev = evaluate(report, truth, traj1, traj2).to_dict()
    if args.out:
        _write_json(Path(args.out), ev)
    print(json.dumps(ev, indent=2))
    return ev


def cmd_sweep(args) -> dict:
    d = _read_json(args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    protocol = SweepProtocol.from_dict(d)
    workers = args.workers if args.workers is not None else default_workers()

    def progress(row, n_done, n_total):
        status = row["error"] or f"t_d err {row['td_error_ms']:.3f} ms"
        print(f"[{n_done}/{n_total}] cell {row['cell']} rep {row['rep']}: {status}", file=sys.stderr)

    agg = run_sweep(protocol, args.out, workers, progress)
    print(f"wrote {len(agg)} rows to {Path(args.out) / 'aggregate.csv'}")
    return {"rows": len(agg)}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evsync", description="Synchronize two event cameras observing one moving object.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic two-camera scenario")
    s.add_argument("--config", help="scenario JSON (ScenarioConfig fields)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    for name, func, helptext in (
        ("sync", cmd_sync, "estimate the time offset (and extrinsics when not given)"),
        ("baseline", cmd_baseline, "event-rate ZNCC offset estimate"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("events1")
        s.add_argument("events2")
        s.add_argument("--cameras", nargs=2, required=True, metavar=("CAM1", "CAM2"))
        s.add_argument("--config", help="JSON with optional 'search', 'preprocess' and 'bin_width'")
        s.add_argument("--out", required=True)
        if name == "sync":
            s.add_argument("--extrinsics", help="JSON with R and t (camera 2 from camera 1)")
            s.add_argument("--seed", type=int)
        s.set_defaults(func=func)

    s = sub.add_parser("evaluate", help="compare a sync report with ground truth")
    s.add_argument("report")
    s.add_argument("ground_truth")
    s.add_argument("--trajectories", nargs=2, metavar=("TRAJ1", "TRAJ2"))
    s.add_argument("--out", help="write the evaluation JSON here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="run a protocol sweep and aggregate per cell")
    s.add_argument("--config", help="protocol JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, help="parallel runs (default: $EVSYNC_WORKERS or 1)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except EvsyncError as exc:
        print(f"evsync {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
