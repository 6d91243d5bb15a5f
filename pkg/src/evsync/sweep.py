"""Protocol sweeps: angles x offsets x durations x repetitions, aggregated per cell.

Each run is seeded from (base seed, cell index, repetition) alone, so the
aggregate does not depend on worker count or completion order. Completed runs
are appended to a JSONL manifest; a rerun with the same protocol skips them.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .baseline import DEFAULT_BIN, event_rate, zncc_offset
from .errors import ConfigError, EventFileError, EvsyncError
from .pipeline import PreprocessConfig, evaluate, preprocess
from .simulator import ScenarioConfig, make_scenario
from .sync import SearchConfig, report_dict, sync_known_extrinsics, sync_unknown_extrinsics

WORKERS_ENV = "EVSYNC_WORKERS"
MANIFEST = "runs.jsonl"
AGGREGATE = "aggregate.csv"
METRICS = (
    "td_error_ms",
    "r_error_deg",
    "t_error_deg",
    "known_td_error_ms",
    "zncc_td_error_ms",
    "traj_rmse_m",
)


@dataclass(frozen=True)
class SweepProtocol:
    angles: tuple = (30.0, 60.0, 90.0, 120.0, 150.0)
    offsets_ms: tuple = (5.0, 50.0, 500.0)
    durations: tuple = (10.0, 20.0)
    repetitions: int = 10
    seed: int = 0
    scenario: dict = field(default_factory=dict)  # ScenarioConfig overrides
    search: dict = field(default_factory=dict)  # SearchConfig overrides
    preprocess: dict = field(default_factory=dict)  # PreprocessConfig overrides
    bin_width: int = DEFAULT_BIN  # ZNCC bin, us
    known_extrinsics: bool = True  # also run the known-extrinsics search
    trajectory_rmse: bool = True

    def __post_init__(self):
        for name in ("angles", "offsets_ms", "durations"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ConfigError(f"protocol needs at least one value in {name}")
            object.__setattr__(self, name, vals)
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        reserved = {"seed", "view_angle", "injected_offset", "duration"} & set(self.scenario)
        if reserved:
            raise ConfigError(f"scenario overrides may not set swept fields {sorted(reserved)}")
        # fail early on bad overrides
        ScenarioConfig.from_dict(dict(self.scenario))
        SearchConfig.from_dict(dict(self.search))
        PreprocessConfig.from_dict(dict(self.preprocess))

    @classmethod
    def from_dict(cls, d: dict) -> "SweepProtocol":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown protocol options: {sorted(unknown)}")
        return cls(**d)

    def cells(self) -> list[tuple[float, float, float]]:
        """(duration s, angle deg, offset ms) in table order."""
        return list(itertools.product(self.durations, self.angles, self.offsets_ms))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def run_seed(base: int, cell: int, rep: int) -> int:
    return int(np.random.SeedSequence([base, cell, rep]).generate_state(1)[0])


def run_one(protocol: SweepProtocol, cell: int, rep: int) -> dict:
    """Simulate one scenario and run both searches plus the ZNCC baseline on it."""
    duration, angle, offset_ms = protocol.cells()[cell]
    seed = run_seed(protocol.seed, cell, rep)
    row = {
        "cell": cell,
        "rep": rep,
        "duration_s": duration,
        "view_angle_deg": angle,
        "offset_ms": offset_ms,
        "seed": seed,
        "error": None,
    }
    row.update({m: None for m in METRICS})
    start = time.perf_counter()
    try:
        cfg = ScenarioConfig.from_dict(
            {
                **protocol.scenario,
                "seed": seed,
                "duration": duration,
                "view_angle": angle,
                "injected_offset": int(round(offset_ms * 1000)),
            }
        )
        scn = make_scenario(cfg)
        search = SearchConfig.from_dict({**protocol.search, "seed": seed})
        pre = PreprocessConfig.from_dict(protocol.preprocess)
        traj1, _ = preprocess(scn.stream1, pre)
        traj2, _ = preprocess(scn.stream2, pre)

        sig1 = event_rate(scn.stream1, protocol.bin_width, t0=0)
        sig2 = event_rate(scn.stream2, protocol.bin_width, t0=0)
        z_off, _ = zncc_offset(sig1, sig2, search.t_begin, search.t_end)
        row["zncc_td_error_ms"] = abs(z_off - cfg.injected_offset) / 1000.0

        if protocol.known_extrinsics:
            known = sync_known_extrinsics(traj1, traj2, cfg.camera, cfg.camera, scn.truth.extrinsics, search)
            row["known_td_error_ms"] = abs(known.t_d_star - cfg.injected_offset) / 1000.0

        res = sync_unknown_extrinsics(traj1, traj2, cfg.camera, cfg.camera, search)
        ev = evaluate(
            report_dict(res),
            scn.truth,
            traj1 if protocol.trajectory_rmse else None,
            traj2 if protocol.trajectory_rmse else None,
        )
        row["td_error_ms"] = ev.t_d_error
        row["r_error_deg"] = ev.rotation_error
        row["t_error_deg"] = ev.translation_direction_error
        row["traj_rmse_m"] = ev.trajectory_rmse
    except EvsyncError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["runtime_s"] = time.perf_counter() - start
    return row


def _run_task(args) -> dict:
    return run_one(*args)


def read_manifest(path: Path, digest: str) -> dict[tuple[int, int], dict]:
    done = {}
    if not path.exists():
        return done
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                # a run killed mid-write leaves a torn last line; it is simply redone
                continue
            if rec.get("protocol") != digest:
                raise ConfigError(
                    f"{path}: line {lineno} belongs to a different protocol; use a fresh output directory"
                )
            done[(rec["cell"], rec["rep"])] = rec
    return done


def aggregate(rows: list[dict], protocol: SweepProtocol) -> pd.DataFrame:
    """Per-cell mean and sample std of every metric, one row per (duration, angle, offset)."""
    df = pd.DataFrame(sorted(rows, key=lambda r: (r["cell"], r["rep"])))
    out = []
    for cell, (duration, angle, offset_ms) in enumerate(protocol.cells()):
        sub = df[df["cell"] == cell]
        rec = {
            "duration_s": duration,
            "view_angle_deg": angle,
            "offset_ms": offset_ms,
            "n_runs": len(sub),
            "n_failed": int(sub["error"].notna().sum()),
        }
        for m in METRICS:
            vals = sub[m].dropna().to_numpy(float)
            rec[f"{m}_mean"] = float(vals.mean()) if len(vals) else np.nan
            rec[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else np.nan
        out.append(rec)
    return pd.DataFrame(out).sort_values(["duration_s", "view_angle_deg", "offset_ms"], kind="stable")


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def run_sweep(protocol: SweepProtocol, out_dir, workers: int | None = None, progress=None) -> pd.DataFrame:
    """Run every missing (cell, rep), append each to the manifest, write and return the aggregate."""
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EventFileError(f"cannot create {out}: {exc}") from exc
    digest = protocol.digest()
    manifest = out / MANIFEST
    done = read_manifest(manifest, digest)
    todo = [
        (protocol, cell, rep)
        for cell in range(len(protocol.cells()))
        for rep in range(protocol.repetitions)
        if (cell, rep) not in done
    ]

    def record(row):
        row = {"protocol": digest, **row}
        with open(manifest, "a") as fh:
            fh.write(json.dumps(row) + "\n")
        done[(row["cell"], row["rep"])] = row
        if progress is not None:
            progress(row, len(done), len(protocol.cells()) * protocol.repetitions)

    if workers == 1:
        for task in todo:
            record(run_one(*task))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_task, todo):
                record(row)

    agg = aggregate(list(done.values()), protocol)
    try:
        agg.to_csv(out / AGGREGATE, index=False, lineterminator="\n", float_format="%.6f")
    except OSError as exc:
        raise EventFileError(f"cannot write aggregate: {exc}") from exc
    return agg
