"""Command-line harness: seeded runs, method sweeps, and analysis artifacts.

Every run writes to its output directory:

    config.json       fully resolved configuration (reloadable via --config)
    metrics.csv       one row per completed training episode
    lambda_trace.csv  per-step mean importance per modality, with audio class
    embeddings.csv    per-modality feature vectors sampled every few steps
    eval.csv          per-episode evaluation results (when --eval-episodes > 0)
    checkpoint.json   extractor/head parameters, modality stats, Adam moments
    run_info.json     wall-clock totals and counters (kept out of metrics.csv
                      so identical configs produce byte-identical metrics)

All files are written atomically (temp file + rename). Exit codes:
0 success, 1 configuration error, 2 numerical abort (a NaN dump is written).
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import multiprocessing as mp
import os
import sys
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import envs
from .agent import METHODS, NumericalError, TrainConfig, Trainer
from .extractors import array_payload, load_arrays, load_into, payload_array

METRICS_SCHEMA = "maie-metrics-v1"
EMBED_DIM = 32


@dataclass
class RunConfig:
    env: str = "hetero_nav"
    method: str = "maie"
    seed: int = 0
    episodes: int = 100
    out: str = "runs/out"
    eval_episodes: int = 0
    max_env_steps: int | None = None
    gamma: float = 0.99
    rollout_length: int = 32
    lr: float = 1e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    c_sim: float = 0.1
    c_td: float = 0.01
    xi: float = 0.05
    stats_eps: float = 1e-5
    distance: str = "cosine"
    grad_clip: float = 5.0
    fixed_weight: float = 0.5

    def __post_init__(self):
        if self.env not in envs.ENV_NAMES:
            raise ValueError(f"env must be one of {envs.ENV_NAMES}, got {self.env!r}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.eval_episodes < 0:
            raise ValueError("eval_episodes must be >= 0")
        self.train_config()  # validates the shared hyperparameters

    def train_config(self) -> TrainConfig:
        fields = {f.name for f in dataclasses.fields(TrainConfig)}
        payload = {k: v for k, v in dataclasses.asdict(self).items() if k in fields}
        return TrainConfig(**payload)


def _atomic_write(path: str, text: str):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: str, header: list, rows) -> None:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    _atomic_write(path, buf.getvalue())


def write_metrics_csv(path: str, rows: list, modalities: list):
    header = ["episode", "env_steps", "return", "success", "loss_actor", "loss_critic", "loss_sim", "loss_td"]
    header += [f"lambda_{m}" for m in modalities]
    _write_csv(path, header, ([r[h] for h in header] for r in rows))


def read_metrics_csv(path: str) -> dict:
    """Columns of metrics.csv as float arrays keyed by header name."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        cols = {h: [] for h in header}
        for line in fh:
            for h, v in zip(header, line.strip().split(",")):
                cols[h].append(float(v))
    return {h: np.asarray(v) for h, v in cols.items()}


def _write_lambda_trace(path: str, rows: list, modalities: list):
    header = ["phase", "episode", "step", "audio_class"] + [f"lambda_{m}" for m in modalities]
    _write_csv(path, header, ((phase, ep, st, ac, *lams) for phase, ep, st, ac, lams in rows))


def _write_embeddings(path: str, rows: list):
    header = ["phase", "episode", "step", "modality"] + [f"f{i}" for i in range(EMBED_DIM)]
    _write_csv(path, header, ((phase, ep, st, mod, *vec.tolist()) for phase, ep, st, mod, vec in rows))


def save_checkpoint(path: str, trainer: Trainer):
    payload = {
        "format": "maie-checkpoint-v1",
        "params": {k: array_payload(v.data) for k, v in trainer.named_parameters().items()},
        "stats": trainer.stats_payload(),
        "adam": {k: {"m": array_payload(st["m"]), "v": array_payload(st["v"]), "t": st["t"]}
                 for k, st in trainer.opt.state_arrays().items()},
    }
    _atomic_write(path, json.dumps(payload, separators=(",", ":")))


def load_checkpoint(path: str, trainer: Trainer):
    with open(path) as fh:
        payload = json.load(fh)
    arrays = {k: payload_array(v) for k, v in payload["params"].items()}
    load_into(trainer.named_parameters(), arrays)
    trainer.load_stats_payload(payload["stats"])
    adam = {
        k: {"m": payload_array(v["m"]), "v": payload_array(v["v"]), "t": v["t"]}
        for k, v in payload.get("adam", {}).items()
    }
    trainer.opt.load_state_arrays(adam)


def run(cfg: RunConfig) -> int:
    """Execute one seeded training run and write its artifacts."""
    try:
        os.makedirs(cfg.out, exist_ok=True)
        env = envs.make_env(cfg.env, cfg.seed)
        trainer = Trainer(env, cfg.train_config())
    except (ValueError, OSError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1

    config_payload = dataclasses.asdict(cfg)
    config_payload["metrics_schema"] = METRICS_SCHEMA
    _atomic_write(os.path.join(cfg.out, "config.json"), json.dumps(config_payload, indent=2, sort_keys=True))

    t0 = time.perf_counter()
    try:
        trainer.run(episodes=cfg.episodes, max_env_steps=cfg.max_env_steps)
        eval_rows = trainer.run_eval(cfg.eval_episodes) if cfg.eval_episodes else []
    except NumericalError as e:
        dump_path = os.path.join(cfg.out, "nan_dump.json")
        _atomic_write(dump_path, json.dumps({"error": str(e), **e.dump}, indent=2))
        print(f"numerical abort: {e}; rollout dump at {dump_path}", file=sys.stderr)
        return 2
    wall = time.perf_counter() - t0

    mods = trainer.modalities
    write_metrics_csv(os.path.join(cfg.out, "metrics.csv"), trainer.metrics_rows, mods)
    _write_lambda_trace(os.path.join(cfg.out, "lambda_trace.csv"), trainer.lambda_rows, mods)
    _write_embeddings(os.path.join(cfg.out, "embeddings.csv"), trainer.embedding_rows)
    if eval_rows:
        _write_csv(
            os.path.join(cfg.out, "eval.csv"),
            ["episode", "return", "success", "steps"],
            ([r["episode"], r["return"], r["success"], r["steps"]] for r in eval_rows),
        )
    save_checkpoint(os.path.join(cfg.out, "checkpoint.json"), trainer)
    _atomic_write(
        os.path.join(cfg.out, "run_info.json"),
        json.dumps(
            {
                "wall_seconds": wall,
                "env_steps": trainer.env_steps,
                "episodes": trainer.episode,
                "ms_per_env_step": 1e3 * wall / max(trainer.env_steps, 1),
            },
            indent=2,
        ),
    )
    return 0


def final_window_stats(rows_or_path, window_fraction: float = 0.1) -> dict:
    """Mean return/success over the last fraction of a run's episodes."""
    if isinstance(rows_or_path, (str, os.PathLike)):
        cols = read_metrics_csv(rows_or_path)
        returns, successes = cols["return"], cols["success"]
    else:
        returns = np.asarray([r["return"] for r in rows_or_path])
        successes = np.asarray([r["success"] for r in rows_or_path])
    n = len(returns)
    k = max(1, int(np.ceil(window_fraction * n)))
    return {"return": float(returns[-k:].mean()), "success": float(successes[-k:].mean()), "episodes": n}


def _sweep_worker(args) -> dict:
    cfg_dict, method, seed = args
    cfg_dict = dict(cfg_dict)
    cfg_dict["method"] = method
    cfg_dict["seed"] = seed
    cfg_dict["out"] = os.path.join(cfg_dict["out"], f"{method}_seed{seed}")
    try:
        cfg = RunConfig(**cfg_dict)
    except ValueError as e:
        return {"method": method, "seed": seed, "status": 1, "error": str(e)}
    code = run(cfg)
    result = {"method": method, "seed": seed, "status": code}
    if code == 0:
        result.update(final_window_stats(os.path.join(cfg.out, "metrics.csv")))
    return result


def sweep(base: RunConfig, seeds: list, methods: list, jobs: int = 1) -> int:
    """Run the method x seed cross product and summarize final-window returns."""
    if not seeds or not methods:
        print("sweep needs nonempty seed and method lists", file=sys.stderr)
        return 1
    os.makedirs(base.out, exist_ok=True)
    base_dict = dataclasses.asdict(base)
    tasks = [(base_dict, m, s) for m in methods for s in seeds]
    if jobs > 1:
        with mp.get_context("spawn").Pool(processes=jobs) as pool:
            results = pool.map(_sweep_worker, tasks)
    else:
        results = [_sweep_worker(t) for t in tasks]

    ok = [r for r in results if r["status"] == 0]
    failed = [r for r in results if r["status"] != 0]
    for r in failed:
        print(f"run failed: method={r['method']} seed={r['seed']} status={r['status']}", file=sys.stderr)

    rows = []
    for method in sorted(set(methods)):
        per = [r for r in ok if r["method"] == method]
        if not per:
            continue
        rets = np.asarray([r["return"] for r in per])
        succ = np.asarray([r["success"] for r in per])
        rows.append(
            [
                base.env,
                method,
                len(per),
                float(rets.mean()),
                float(rets.std()),
                float(succ.mean()),
                float(succ.std()),
            ]
        )
    _write_csv(
        os.path.join(base.out, "summary.csv"),
        ["env", "method", "seeds", "final_return_mean", "final_return_std", "final_success_mean", "final_success_std"],
        rows,
    )
    return 0 if ok else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maie", description="Multimodal RL training harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--env", choices=envs.ENV_NAMES, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--episodes", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--eval-episodes", type=int, dest="eval_episodes", default=None)
        p.add_argument("--max-env-steps", type=int, dest="max_env_steps", default=None)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--rollout-length", type=int, dest="rollout_length", default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--entropy-coef", type=float, dest="entropy_coef", default=None)
        p.add_argument("--value-coef", type=float, dest="value_coef", default=None)
        p.add_argument("--c-sim", type=float, dest="c_sim", default=None)
        p.add_argument("--c-td", type=float, dest="c_td", default=None)
        p.add_argument("--xi", type=float, default=None)
        p.add_argument("--stats-eps", type=float, dest="stats_eps", default=None)
        p.add_argument("--distance", choices=("cosine", "squared_euclidean"), default=None)
        p.add_argument("--grad-clip", type=float, dest="grad_clip", default=None)
        p.add_argument("--fixed-weight", type=float, dest="fixed_weight", default=None)

    p_run = sub.add_parser("run", help="train one configuration")
    add_common(p_run)
    p_run.add_argument("--method", choices=METHODS, default=None)
    p_run.add_argument("--config", default=None, help="load a saved config.json, then apply explicit flags")

    p_sweep = sub.add_parser("sweep", help="run a method x seed cross product")
    add_common(p_sweep)
    p_sweep.add_argument("--methods", default="maie", help="comma-separated method list")
    p_sweep.add_argument("--seeds", default="0", help="comma-separated seed list")
    p_sweep.add_argument("--jobs", type=int, default=1)
    return parser


def _merge_config(args, base: dict | None = None) -> dict:
    merged = {f.name: f.default for f in dataclasses.fields(RunConfig)}
    if base:
        merged.update({k: v for k, v in base.items() if k in merged})
    for key in merged:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:  # argparse exits on bad flags; map to the config error code
        return 0 if e.code in (0, None) else 1
    try:
        if args.command == "run":
            base = None
            if args.config:
                with open(args.config) as fh:
                    base = json.load(fh)
            cfg = RunConfig(**_merge_config(args, base))
            return run(cfg)
        if args.command == "sweep":
            cfg = RunConfig(**{**_merge_config(args), "method": "maie"})
            seeds = [int(s) for s in str(args.seeds).split(",") if s != ""]
            methods = [m for m in str(args.methods).split(",") if m]
            for m in methods:
                if m not in METHODS:
                    raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
            return sweep(cfg, seeds, methods, jobs=args.jobs)
    except ValueError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
