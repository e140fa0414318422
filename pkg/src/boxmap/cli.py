"""``boxmap`` command line: bench, fit, demo and floorgen."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import floorgen
from .bench import BenchConfig, RunSummary, episode_metrics, run_matrix
from .explore import STRATEGIES, EpisodeConfig, run_episode
from .gridworld import TsdfGrid, read_pgm
from .predictor import FitterConfig, fit_boxes


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise SystemExit(f"{path}: config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _merge(args: argparse.Namespace, keys: tuple[str, ...]) -> dict:
    """Config file values, overridden by flags given on the command line."""
    out = _load_config(getattr(args, "config", None))
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def cmd_bench(args) -> int:
    d = _merge(args, ("envs", "starts", "strategies", "predictor", "seed", "n_rooms", "rho",
                      "sigma", "lam", "max_updates", "workers", "out"))
    if args.strict_oracle:
        d["door_reveal"] = False
    cfg = BenchConfig.from_dict(d)
    summary = run_matrix(cfg)
    _print_summary(summary)
    if cfg.out:
        print(f"wrote {cfg.out}/runs.csv, summary.json, episodes.jsonl")
    return 0


def _print_summary(summary: RunSummary) -> None:
    agg = summary.aggregates()
    print(f"{'strategy':<10}{'episodes':>9}{'steps':>10}{'updates':>9}{'memory':>10}{'ssim':>8}{'hamming':>9}")
    for s, a in agg.items():
        print(f"{s:<10}{a['episodes']:>9}{a['steps']['mean']:>10.1f}{a['updates']['mean']:>9.2f}"
              f"{a['memory_bytes']['mean']:>10.0f}{a['ssim']['mean']:>8.3f}{a['hamming']['mean']:>9.4f}")


def cmd_fit(args) -> int:
    d = _merge(args, ("tsdf", "out", "max_iters", "restarts", "seed", "trace"))
    if "tsdf" not in d or "out" not in d:
        raise SystemExit("fit needs --tsdf and --out")
    truth = read_pgm(d["tsdf"])
    if not isinstance(truth, TsdfGrid):
        raise SystemExit(f"{d['tsdf']} is an occupancy PGM, not a TSDF")
    kw = {k: d[k] for k in ("max_iters", "restarts", "seed") if k in d}
    res = fit_boxes(truth, FitterConfig(**kw))
    Path(d["out"]).write_text(res.boxes.to_json())
    if d.get("trace"):
        res.dump_trace(d["trace"])
    r = res.report
    print(f"fit {len(res.boxes.rooms)} rooms, {len(res.boxes.doors)} doors; "
          f"loss {r.total:.5f} (tsdf {r.l_tsdf:.5f}, door {r.l_door:.5f})")
    return 0


def cmd_demo(args) -> int:
    d = _merge(args, ("seed", "strategy", "predictor", "n_rooms", "start", "dump_frames", "out"))
    seed = int(d.get("seed", 0))
    fp = floorgen.generate(seed, n_rooms=int(d.get("n_rooms", 5)))
    starts = floorgen.random_starts(fp, int(d.get("start", 0)) + 1, np.random.default_rng(seed))
    frames = d.get("dump_frames")
    if frames is True:
        frames = f"frames_{seed}"
    cfg = EpisodeConfig(strategy=d.get("strategy", "greedy"), predictor=d.get("predictor", "oracle"),
                        dump_frames=frames or None)
    res = run_episode(fp.world, starts[-1], cfg, fp.annotations, seed=seed)
    m = episode_metrics(res, fp.world)
    print(f"{res.strategy}: {res.status}, {res.steps} steps, {res.updates} updates, "
          f"{res.rooms_visited}/{fp.n_rooms} rooms, ssim {m['ssim']:.3f}, hamming {m['hamming']:.4f}")
    if d.get("out"):
        Path(d["out"]).write_text(res.to_json())
    if frames:
        print(f"frames in {frames}/")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="boxmap", description="Box-based map prediction and exploration.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log planner warnings")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run the environments x starts x strategies matrix")
    b.add_argument("--config")
    b.add_argument("--envs", type=int)
    b.add_argument("--starts", type=int)
    b.add_argument("--strategies", help=f"comma list from {','.join(STRATEGIES)}")
    b.add_argument("--predictor", choices=("oracle", "fitter"))
    b.add_argument("--seed", type=int)
    b.add_argument("--n-rooms", dest="n_rooms", type=int)
    b.add_argument("--rho", type=float)
    b.add_argument("--sigma", type=float)
    b.add_argument("--lam", type=float, help="frontier information weight")
    b.add_argument("--max-updates", dest="max_updates", type=int)
    b.add_argument("--workers", type=int)
    b.add_argument("--strict-oracle", action="store_true", help="rooms revealed by visibility only")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("fit", help="fit boxes to a TSDF PGM")
    f.add_argument("--config")
    f.add_argument("--tsdf")
    f.add_argument("--out")
    f.add_argument("--max-iters", dest="max_iters", type=int)
    f.add_argument("--restarts", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--trace", help="write the loss trace as JSON lines")
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("demo", help="one exploration episode on a generated floorplan")
    d.add_argument("--config")
    d.add_argument("--seed", type=int)
    d.add_argument("--strategy", choices=STRATEGIES)
    d.add_argument("--predictor", choices=("oracle", "fitter"))
    d.add_argument("--n-rooms", dest="n_rooms", type=int)
    d.add_argument("--start", type=int, help="index of the random start")
    d.add_argument("--dump-frames", dest="dump_frames", nargs="?", const=True,
                   help="write per-update PGM frames (optionally into DIR)")
    d.add_argument("--out", help="write the episode JSON")
    d.set_defaults(func=cmd_demo)

    # handled in main so its own parser sees every flag
    sub.add_parser("floorgen", help="generate an annotated floorplan (see floorgen --help)")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if argv[:1] == ["floorgen"]:
        return floorgen.main(argv[1:])
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"boxmap: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
