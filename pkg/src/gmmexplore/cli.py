"""Command line entry point: ``gmmexplore {run,compare,reconstruct,report}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import functools
import os
import sys
from concurrent.futures import FIRST_EXCEPTION, ProcessPoolExecutor, wait

import numpy as np

from .cave import Environment, MeshFormatError, generate_cave, load_ply
from .config import ConfigError, RunConfig, dump_config, load_config
from .gmm import sample
from .gmm_map import GmmMap, read_keyframe_stream
from .occupancy import (
    InverseSensorModel,
    Reconstructor,
    Aabb,
    load_grid,
    reconstruct_full,
    save_grid,
    tristate_agreement,
)
from .report import comparison_charts, read_metrics, summarize
from .simulator import run_trial

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


class DataError(Exception):
    pass


@functools.lru_cache(maxsize=4)
def _generated(seed: int, dims: tuple) -> Environment:
    return generate_cave(seed, dims)


def load_environment(cfg: RunConfig) -> Environment:
    e = cfg.environment
    if e.mesh:
        try:
            return load_ply(e.mesh)
        except OSError as exc:
            raise DataError(f"cannot read mesh {e.mesh}: {exc.strerror}") from None
        except MeshFormatError as exc:
            raise DataError(f"{e.mesh}: {exc}") from None
    return _generated(e.seed, tuple(e.dims))


def _trial_dir(out: str, sensor: str, mode: str, seed: int) -> str:
    return os.path.join(out, f"{sensor}_{mode}_s{seed}")


def execute_trial(cfg: RunConfig, out_dir: str, save_grids: bool = False) -> dict:
    """Run one trial and write its files; returns a small summary."""
    env = load_environment(cfg)
    tcfg = cfg.trial_config()
    if save_grids and tcfg.mode == "mcg":
        tcfg = dataclasses.replace(tcfg, keep_oracle_grid=True)
    result = run_trial(tcfg, env)
    paths = result.write(out_dir)
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        fh.write(dump_config(cfg))
    if save_grids:
        save_grid(os.path.join(out_dir, "referee.npz"), result.referee)
        if result.oracle_grid is not None:
            save_grid(os.path.join(out_dir, "oracle.npz"), result.oracle_grid)
    return {"dir": out_dir, "status": result.status, "bytes": result.bytes_total,
            "final_entropy": result.final_entropy, **paths}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmmexplore", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, many=False):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--sensor", choices=("lidar", "depth"))
        sp.add_argument("--duration", type=float, help="simulated seconds")
        sp.add_argument("--out", default="out", help="output directory")
        if many:
            sp.add_argument("--modes", default="mcg,og", help="comma separated modes")
            sp.add_argument("--seeds", default="0,1,2,3", help="comma separated seeds or a count like 4")
            sp.add_argument("--jobs", type=int, default=1, help="parallel trials")
        else:
            sp.add_argument("--mode", choices=("mcg", "og"))
            sp.add_argument("--seed", type=int)

    r = sub.add_parser("run", help="run one trial")
    common(r)
    r.add_argument("--save-grids", action="store_true", help="also write the referee (and MCG raw-scan) grids")
    r.add_argument("--dump-config", action="store_true", help="print the effective config and exit")

    c = sub.add_parser("compare", help="run a mode x seed matrix and summarize")
    common(c, many=True)

    rc = sub.add_parser("reconstruct", help="resample a keyframe stream")
    rc.add_argument("stream", help="keyframe stream (.gmk)")
    rc.add_argument("--n-samples", type=int, default=1_000_000, help="points drawn from the occupied mixtures")
    rc.add_argument("--seed", type=int, default=0)
    rc.add_argument("--resolution", type=float, default=0.2)
    rc.add_argument("--max-range", type=float, default=5.0)
    rc.add_argument("--out", default="reconstruction.xyz", help="ASCII point file, one 'x y z' per line")
    rc.add_argument("--grid-out", help="write the rebuilt occupancy grid (.npz)")
    rc.add_argument("--reference", help="reference grid (.npz) to score tri-state agreement against")

    rp = sub.add_parser("report", help="SVG charts and a summary from metrics CSVs")
    rp.add_argument("inputs", nargs="+", help="metrics CSV files or directories searched for metrics.csv")
    rp.add_argument("--out", default="report")
    return p


def _parse_seeds(text: str) -> list[int]:
    try:
        parts = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad --seeds value {text!r}") from None
    if len(parts) == 1 and "," not in text:
        parts = list(range(parts[0]))
    if not parts:
        raise ConfigError("need at least one seed")
    return parts


def cmd_run(args) -> int:
    cfg = load_config(args.config).with_overrides(mode=args.mode, sensor=args.sensor, seed=args.seed,
                                                  duration=args.duration)
    cfg.trial_config()
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    s = execute_trial(cfg, args.out, args.save_grids)
    print(f"{s['status']}: bytes={s['bytes']} final_entropy_bits={s['final_entropy']:.1f} -> {args.out}")
    return EXIT_OK


def _worker(cfg: RunConfig, out_dir: str) -> dict:
    return execute_trial(cfg, out_dir)


def cmd_compare(args) -> int:
    base = load_config(args.config).with_overrides(sensor=args.sensor, duration=args.duration)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in ("mcg", "og"):
            raise ConfigError(f"unknown mode {m!r}")
    seeds = _parse_seeds(args.seeds)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    jobs = []
    for seed in seeds:
        for mode in modes:
            cfg = base.with_overrides(mode=mode, seed=seed)
            cfg.trial_config()
            jobs.append((cfg, _trial_dir(args.out, cfg.trial.sensor, mode, seed)))
    os.makedirs(args.out, exist_ok=True)
    done, failed = [], None
    if args.jobs == 1:
        for cfg, d in jobs:
            try:
                done.append(_worker(cfg, d))
            except Exception as exc:  # abort the batch, keep finished trials
                failed = (d, exc)
                break
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futs = {pool.submit(_worker, cfg, d): d for cfg, d in jobs}
            finished, pending = wait(futs, return_when=FIRST_EXCEPTION)
            for f in pending:
                f.cancel()
            for f in sorted(finished, key=lambda f: futs[f]):
                if f.exception() is None:
                    done.append(f.result())
                elif failed is None:
                    failed = (futs[f], f.exception())
    tables = [read_metrics(s["metrics"]) for s in sorted(done, key=lambda s: s["dir"])]
    if tables:
        _write_summary(tables, args.out)
    if failed is not None:
        print(f"trial {failed[0]} failed: {failed[1]}; {len(done)} finished trials kept", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _write_summary(tables: list, out: str) -> None:
    rows = summarize(tables)
    path = os.path.join(out, "summary.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for name, svg in comparison_charts(tables).items():
        with open(os.path.join(out, name), "w") as fh:
            fh.write(svg)
    for r in rows:
        print(f"{r['mode']}: trials={r['trials']} mean_bytes={r['mean_bytes']:.0f} "
              f"mean_final_entropy={r['mean_final_entropy_bits']:.1f} og/mcg={r['og_over_mcg_bytes']:.1f}")


def cmd_reconstruct(args) -> int:
    if args.n_samples < 0:
        raise ConfigError("--n-samples must be >= 0")
    if not args.resolution > 0 or not args.max_range > 0:
        raise ConfigError("--resolution and --max-range must be positive")
    try:
        with open(args.stream, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {args.stream}: {exc.strerror}") from None
    try:
        keyframes = read_keyframe_stream(data)
    except ValueError as exc:
        raise DataError(f"{args.stream}: {exc}") from None
    gmap = GmmMap()
    for kf in keyframes:
        gmap.insert(kf)

    # occupied points, split across keyframes by their occupied support
    occ = [kf.occupied for kf in keyframes]
    support = np.array([g.support_size if len(g) else 0 for g in occ], dtype=float)
    pts = np.zeros((0, 3))
    if args.n_samples > 0 and support.sum() > 0:
        rng = np.random.default_rng(args.seed)
        counts = rng.multinomial(args.n_samples, support / support.sum())
        chunks = [sample(g, int(n), seed=[args.seed, i]) for i, (g, n) in enumerate(zip(occ, counts)) if n > 0]
        pts = np.concatenate(chunks)
    np.savetxt(args.out, pts, fmt="%.6f")
    print(f"{len(pts)} points from {len(keyframes)} keyframes -> {args.out}")

    if args.grid_out or args.reference:
        ref = None
        if args.reference:
            try:
                ref = load_grid(args.reference)
            except (OSError, ValueError) as exc:
                raise DataError(f"{args.reference}: {exc}") from None
        if ref is not None:
            box = ref.bounds
        elif keyframes:
            o = np.array([kf.origin_pose.translation for kf in keyframes])
            box = Aabb(o.min(axis=0) - args.max_range, o.max(axis=0) + args.max_range)
        else:
            box = Aabb(np.zeros(3), np.full(3, args.resolution))
        res = ref.resolution if ref is not None else args.resolution
        rec = Reconstructor(gmap, args.max_range, InverseSensorModel.clamped(), seed=args.seed)
        grid = reconstruct_full(gmap, box, res, rec)
        if args.grid_out:
            save_grid(args.grid_out, grid)
        if ref is not None:
            agree, n = tristate_agreement(grid, ref)
            print(f"tri-state agreement {agree:.4f} over {n} reference-known voxels")
    return EXIT_OK


def cmd_report(args) -> int:
    paths = []
    for p in args.inputs:
        if os.path.isdir(p):
            for root, _, files in sorted(os.walk(p)):
                if "metrics.csv" in files:
                    paths.append(os.path.join(root, "metrics.csv"))
        else:
            paths.append(p)
    if not paths:
        raise DataError("no metrics CSV files found")
    try:
        tables = [read_metrics(p) for p in sorted(paths)]
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    _write_summary(tables, args.out)
    return EXIT_OK


_COMMANDS = {"run": cmd_run, "compare": cmd_compare, "reconstruct": cmd_reconstruct, "report": cmd_report}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
