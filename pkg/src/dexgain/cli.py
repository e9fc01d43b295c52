"""Command-line entry point: ``dexgain <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure. Run
directories go under ``$DEXGAIN_OUTPUT_ROOT`` (default ``./runs``) unless an
explicit output path is given. Heavy modules are imported lazily so that
``--deterministic`` can pin thread counts before numpy loads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUTPUT_ROOT_ENV = "DEXGAIN_OUTPUT_ROOT"
MANIFEST = "manifest.json"
LOCK = ".lock"
MANIFEST_SCHEMA = "dexgain.run/1"
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")

log = logging.getLogger("dexgain")


class RuntimeFailure(RuntimeError):
    pass


# -- run directories ---------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_tree(root: Path) -> dict:
    """Relative path -> sha256 for every artifact under ``root`` (manifest and lock excluded)."""
    out = {}
    for p in sorted(root.rglob("*")):
        rel = p.relative_to(root).as_posix()
        if p.is_file() and rel not in (MANIFEST, LOCK):
            out[rel] = sha256_file(p)
    return out


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def new_run_dir(prefix: str) -> Path:
    root = output_root()
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = root / f"{prefix}-{stamp}"
    n = 1
    while path.exists():
        n += 1
        path = root / f"{prefix}-{stamp}-{n}"
    return path


class RunLock:
    """Exclusive lock file inside a run directory."""

    def __init__(self, run_dir: Path):
        self.path = Path(run_dir) / LOCK

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise RuntimeFailure(f"{self.path.parent} is locked by another process ({self.path})") from exc
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def write_manifest(run_dir: Path, command: str, cfg, started: float, inputs: dict | None = None,
                   extra: dict | None = None) -> dict:
    from dexgain import __version__
    from dexgain.config import config_to_dict

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "code_version": __version__,
        "config": config_to_dict(cfg),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "inputs": {str(k): v for k, v in sorted((inputs or {}).items())},
        "outputs": digest_tree(run_dir),
    }
    manifest.update(extra or {})
    (run_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def input_digests(*paths) -> dict:
    out = {}
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        if p.is_dir():
            for rel, d in digest_tree(p).items():
                out[f"{p}/{rel}"] = d
        elif p.is_file():
            out[str(p)] = sha256_file(p)
    return out


# -- shared helpers --------------------------------------------------------------

def _load_cfg(args):
    from dexgain.config import load_config

    sets = list(args.set or [])
    if args.seed is not None:
        sets.append(f"seed={args.seed}")
    return load_config(args.config, sets)


def _ppo(cfg, budget=None):
    import dataclasses

    ppo = dataclasses.replace(cfg.ppo, seed=cfg.seed)
    if budget is not None:
        ppo = dataclasses.replace(ppo, total_steps=int(budget))
    return ppo


def _gain_map(cfg, scale: float, nj: int):
    from dexgain.controller import GainMap

    if scale == 1.0:
        return None
    return GainMap.from_ranges(cfg.bounds, cfg.bounds.scaled(scale), nj)


def _resolve_out(args, prefix: str) -> Path:
    return Path(args.out) if getattr(args, "out", None) else new_run_dir(prefix)


def _require_fresh(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise RuntimeFailure(f"{path} exists; pass --force to overwrite")


# -- stage implementations (shared by single commands and the pipeline) --------------

def stage_oracle(cfg, out: Path, fixed: bool, budget=None, init=None) -> list:
    from dexgain.controller import manual_gains
    from dexgain.ppo import train_oracle

    gains = manual_gains(cfg.scene.num_joints) if fixed else None
    res = train_oracle(cfg.task, cfg.scene, _ppo(cfg, budget), cfg.bounds, fixed_gains=gains, out_dir=out,
                       init_policy=init)
    if res.aborted:
        raise RuntimeFailure("oracle training diverged; last good checkpoint kept")
    return ["oracle.ckpt", "curve.csv"]


def stage_collect(cfg, oracle_ckpt: Path, out: Path, n_episodes=None, seed_offset: int = 1) -> list:
    from dexgain.distill import collect_dataset, save_dataset
    from dexgain.ppo import OraclePolicy

    oracle = OraclePolicy.load(oracle_ckpt)
    n = cfg.distill.n_episodes if n_episodes is None else n_episodes
    ds = collect_dataset(oracle, cfg.task, cfg.scene, n, seed=cfg.seed + seed_offset,
                         batch=cfg.distill.collect_batch)
    save_dataset(ds, out, cfg.distill.format)
    return ["manifest.json", "samples.bin" if cfg.distill.format == "bin" else "samples.jsonl"]


def stage_students(cfg, dataset_dir: Path, out: Path, modules=("action", "gain")) -> list:
    from dexgain.distill import load_dataset, train_student_module

    ds = load_dataset(dataset_dir)
    files = []
    for i, kind in enumerate(modules):
        tcfg = cfg.distill.train_config(cfg.seed + 2 + i)
        train_student_module(kind, ds, cfg.distill.noise(), tcfg, out_dir=out)
        files += [f"{kind}.ckpt", f"{kind}_loss.csv"]
    return files


def stage_eval(cfg, method: str, ckpts: dict, out_csv: Path, n_episodes=None, regime_scale=None,
               disturbance=None):
    from dexgain.eval import EvalConfig, run_eval

    e = cfg.eval
    ecfg = EvalConfig(
        method=method,
        n_episodes=e.n_episodes if n_episodes is None else n_episodes,
        seed=e.seed,
        disturbance=e.disturbance if disturbance is None else disturbance,
        gain_map=_gain_map(cfg, e.regime_scale if regime_scale is None else regime_scale, cfg.scene.num_joints),
        fixed_gain_jitter=e.fixed_gain_jitter,
        batch=e.batch,
    )
    return run_eval(ecfg, cfg.task, cfg.scene, ckpts, cfg.bounds, out_csv=out_csv)


# -- commands --------------------------------------------------------------------

def cmd_train_oracle(args) -> int:
    cfg = _load_cfg(args)
    started = time.time()
    from dexgain.eval import read_csv
    from dexgain.ppo import OraclePolicy, write_curve

    init, prev = None, []
    if args.resume:
        out = Path(args.resume)
        ckpt = out / "oracle.ckpt"
        if not ckpt.is_file():
            raise RuntimeFailure(f"nothing to resume: {ckpt} missing")
        init = OraclePolicy.load(ckpt)
        prev = read_csv(out / "curve.csv") if (out / "curve.csv").is_file() else []
    else:
        out = _resolve_out(args, "oracle")
        if out.exists() and any(out.iterdir()):
            raise RuntimeFailure(f"{out} is not empty; run directories are append-only (use --resume)")
    with RunLock(out):
        budget = args.budget
        stage_oracle(cfg, out, args.fixed_gains, budget, init)
        if prev:
            last_it, last_steps = int(prev[-1]["iteration"]), int(prev[-1]["steps"])
            new = read_csv(out / "curve.csv")
            rows = [{k: float(v) for k, v in r.items()} for r in prev]
            for r in new:
                r = {k: float(v) for k, v in r.items()}
                r["iteration"] += last_it
                r["steps"] += last_steps
                rows.append(r)
            write_curve(out / "curve.csv", rows)
        if args.budget == 0 or _ppo(cfg, budget).total_steps < cfg.ppo.n_envs * cfg.ppo.horizon:
            # no iteration ran: only the initial checkpoint is an artifact
            curve = out / "curve.csv"
            if curve.is_file() and len(curve.read_text().splitlines()) <= 1 and not args.resume:
                curve.unlink()
        write_manifest(out, "train-oracle", cfg, started, input_digests(args.config),
                       {"fixed_gains": bool(args.fixed_gains)})
    print(out)
    return EXIT_OK


def cmd_collect(args) -> int:
    # the dataset manifest (config, seed, episode lengths) doubles as the run manifest
    cfg = _load_cfg(args)
    out = _resolve_out(args, "dataset")
    _require_fresh(out / MANIFEST, args.force)
    with RunLock(out):
        stage_collect(cfg, Path(args.oracle), out, args.episodes)
    print(out)
    return EXIT_OK


def cmd_train_student(args) -> int:
    cfg = _load_cfg(args)
    started = time.time()
    out = _resolve_out(args, "students")
    modules = ("action", "gain") if args.module == "both" else (args.module,)
    with RunLock(out):
        stage_students(cfg, Path(args.dataset), out, modules)
        write_manifest(out, "train-student", cfg, started, input_digests(args.config, args.dataset))
    print(out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    started = time.time()
    out = _resolve_out(args, "eval")
    with RunLock(out):
        rep = stage_eval(cfg, args.method, {"action": args.action, "gain": args.gain}, out / f"{args.method}.csv",
                         args.episodes, args.regime_scale, args.disturbance or None)
        write_manifest(out, "eval", cfg, started, input_digests(args.config, args.action, args.gain))
    from dexgain.eval import compare

    print(compare([rep]))
    print(out)
    return EXIT_OK


def _floats(s):
    return [float(x) for x in s.split(",")] if s else []


def cmd_sweep(args) -> int:
    from dexgain.eval import EvalConfig, sweep_physics

    cfg = _load_cfg(args)
    started = time.time()
    out = _resolve_out(args, "sweep")
    grid = {"mass": _floats(args.masses), "friction": _floats(args.frictions), "scale": _floats(args.scales)}
    e = cfg.eval
    ecfg = EvalConfig(method=args.method, n_episodes=args.episodes or e.n_episodes, seed=e.seed,
                      fixed_gain_jitter=e.fixed_gain_jitter, batch=e.batch,
                      gain_map=_gain_map(cfg, e.regime_scale, cfg.scene.num_joints))
    with RunLock(out):
        sweep_physics(grid, ecfg, cfg.task, cfg.scene, {"action": args.action, "gain": args.gain}, cfg.bounds,
                      out_csv=out / "sweep.csv")
        write_manifest(out, "sweep", cfg, started, input_digests(args.config, args.action, args.gain))
    print(out)
    return EXIT_OK


def cmd_probe(args) -> int:
    from dexgain.distill import StudentModule, load_dataset, probe_gain_module

    out = Path(args.out)
    _require_fresh(out, args.force)
    gain = StudentModule.load(args.gain)
    ds = load_dataset(args.dataset)
    if ds.num_joints != gain.nj or int(ds.manifest["history_len"]) != gain.history_len:
        raise RuntimeFailure("dataset and gain module disagree on joints or history length")
    rows = probe_gain_module(gain, ds, out_csv=out, per_joint=args.per_joint)
    print(f"{len(rows)} rows -> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from dexgain.eval import EvalReport, compare, read_csv

    reports = {}
    for path in args.reports:
        for r in read_csv(path):
            key = (r["method"], int(r["seed"]))
            rep = reports.setdefault(key, EvalReport(r["method"], int(r["seed"])))
            row = dict(r, disturbance=r["disturbance"] == "True")
            for k in ("rotr", "ttf", "objvel", "torque", "net_rad", "mean_kp", "mean_kd"):
                row[k] = float(r[k])
            rep.rows.append(row)
    out_csv = Path(args.out) if args.out else None
    if out_csv is not None:
        _require_fresh(out_csv, args.force)
    print(compare(list(reports.values()), out_csv=out_csv), end="")
    return EXIT_OK


# -- pipeline ---------------------------------------------------------------------

PIPELINE_STAGES = ("oracle", "oracle_fixed", "dataset", "dataset_fixed", "students", "students_fixed", "eval",
                   "report")
STAGE_DEPS = {
    "oracle": (),
    "oracle_fixed": (),
    "dataset": ("oracle",),
    "dataset_fixed": ("oracle_fixed",),
    "students": ("dataset",),
    "students_fixed": ("dataset_fixed",),
    "eval": ("students", "students_fixed"),
    "report": ("eval",),
}
STAGE_SECTIONS = {
    "oracle": ("seed", "task", "scene", "ppo", "bounds"),
    "oracle_fixed": ("seed", "task", "scene", "ppo", "bounds"),
    "dataset": ("seed", "task", "scene", "distill"),
    "dataset_fixed": ("seed", "task", "scene", "distill"),
    "students": ("seed", "distill"),
    "students_fixed": ("seed", "distill"),
    "eval": ("task", "scene", "eval", "bounds"),
    "report": (),
}


def _stage_key(stage: str, cfg_dict: dict, upstream: dict) -> str:
    from dexgain import __version__

    payload = {
        "stage": stage,
        "code_version": __version__,
        "config": {k: cfg_dict[k] for k in STAGE_SECTIONS[stage]},
        "upstream": {d: upstream[d] for d in STAGE_DEPS[stage]},
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _run_stage(stage: str, cfg, run_dir: Path) -> list:
    d = run_dir / stage
    if stage == "oracle":
        return stage_oracle(cfg, d, fixed=False)
    if stage == "oracle_fixed":
        return stage_oracle(cfg, d, fixed=True)
    if stage == "dataset":
        return stage_collect(cfg, run_dir / "oracle" / "oracle.ckpt", d)
    if stage == "dataset_fixed":
        return stage_collect(cfg, run_dir / "oracle_fixed" / "oracle.ckpt", d)
    if stage == "students":
        return stage_students(cfg, run_dir / "dataset", d)
    if stage == "students_fixed":
        return stage_students(cfg, run_dir / "dataset_fixed", d, modules=("action",))
    if stage == "eval":
        s, f = run_dir / "students", run_dir / "students_fixed"
        ckpts = {
            "ours": {"action": s / "action.ckpt", "gain": s / "gain.ckpt"},
            "ours_no_pd": {"action": s / "action.ckpt"},
            "manual_tuning": {"action": f / "action.ckpt"},
        }
        for method, c in ckpts.items():
            stage_eval(cfg, method, c, d / f"{method}.csv")
        return [f"{m}.csv" for m in ckpts]
    if stage == "report":
        from dexgain.eval import EvalReport, compare, read_csv

        reports = []
        for m in ("manual_tuning", "ours_no_pd", "ours"):
            rep = EvalReport(m, cfg.eval.seed)
            for r in read_csv(run_dir / "eval" / f"{m}.csv"):
                row = dict(r, disturbance=r["disturbance"] == "True")
                for k in ("rotr", "ttf", "objvel", "torque", "net_rad"):
                    row[k] = float(r[k])
                rep.rows.append(row)
            reports.append(rep)
        d.mkdir(parents=True, exist_ok=True)
        (d / "compare.txt").write_text(compare(reports, out_csv=d / "compare.csv"))
        return ["compare.txt", "compare.csv"]
    raise ValueError(stage)


def _outputs_valid(stage_dir: Path, record: dict) -> bool:
    files = record.get("files", {})
    if not files:
        return False
    for rel, digest in files.items():
        p = stage_dir / rel
        if not p.is_file() or sha256_file(p) != digest:
            return False
    return True


def run_pipeline(cfg, run_dir: Path, resume: bool, use_cache: bool) -> dict:
    """Run (or reuse) every stage; returns ``{stage: status}`` with status ran, cached or skipped."""
    from dexgain.config import config_to_dict

    cfg_dict = config_to_dict(cfg)
    prev = {}
    if resume and (run_dir / MANIFEST).is_file():
        prev = json.loads((run_dir / MANIFEST).read_text()).get("stages", {})
    cache_root = output_root() / ".cache"
    records, status, upstream = {}, {}, {}
    for stage in PIPELINE_STAGES:
        key = _stage_key(stage, cfg_dict, upstream)
        dirty = any(status[d] == "ran" for d in STAGE_DEPS[stage])
        stage_dir = run_dir / stage
        old = prev.get(stage, {})
        cached = cache_root / key
        if not dirty and old.get("key") == key and _outputs_valid(stage_dir, old):
            status[stage], records[stage] = "skipped", old
        elif not dirty and not resume and use_cache and _outputs_valid(cached, _read_json(cached / "files.json")):
            files = _read_json(cached / "files.json")["files"]
            stage_dir.mkdir(parents=True, exist_ok=True)
            for rel in files:
                shutil.copy2(cached / rel, stage_dir / rel)
            status[stage], records[stage] = "cached", {"key": key, "files": files}
        else:
            if stage_dir.exists():
                shutil.rmtree(stage_dir)
            log.info("pipeline stage %s", stage)
            names = _run_stage(stage, cfg, run_dir)
            files = {rel: sha256_file(stage_dir / rel) for rel in sorted(names)}
            status[stage], records[stage] = "ran", {"key": key, "files": files}
            if use_cache:
                tmp = cache_root / f"{key}.tmp{os.getpid()}"
                if tmp.exists():
                    shutil.rmtree(tmp)
                tmp.mkdir(parents=True)
                for rel in files:
                    shutil.copy2(stage_dir / rel, tmp / rel)
                (tmp / "files.json").write_text(json.dumps({"files": files}, sort_keys=True))
                if cached.exists():
                    shutil.rmtree(cached)
                tmp.rename(cached)
        records[stage]["status"] = status[stage]
        upstream[stage] = records[stage]["files"]
        # keep the manifest current so a failure leaves resumable state
        _write_stage_manifest(run_dir, cfg, records)
    return status


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError):
        return {}


def _write_stage_manifest(run_dir: Path, cfg, records: dict) -> None:
    from dexgain.config import config_to_dict

    path = run_dir / MANIFEST
    old = _read_json(path)
    old.update({"schema": MANIFEST_SCHEMA, "command": "pipeline", "config": config_to_dict(cfg), "stages": records})
    path.write_text(json.dumps(old, indent=2, sort_keys=True) + "\n")


def cmd_pipeline(args) -> int:
    cfg = _load_cfg(args)
    started = time.time()
    if args.resume:
        run_dir = Path(args.resume)
    else:
        run_dir = Path(args.out) if args.out else new_run_dir(f"pipeline-{cfg.name}")
        if run_dir.exists() and any(run_dir.iterdir()):
            raise RuntimeFailure(f"{run_dir} is not empty; use --resume to continue it")
    with RunLock(run_dir):
        status = run_pipeline(cfg, run_dir, bool(args.resume), not args.no_cache)
        stages = _read_json(run_dir / MANIFEST).get("stages", {})
        write_manifest(run_dir, "pipeline", cfg, started, input_digests(args.config), {"stages": stages})
    for stage in PIPELINE_STAGES:
        print(f"{stage:<16}{status[stage]}")
    print(run_dir)
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------

def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (repeatable)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--deterministic", action="store_true", help="single-threaded numerics for bit-exact reruns")
    p.add_argument("--log-level", default="INFO")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dexgain", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-oracle", help="train the PPO oracle")
    _common(p)
    p.add_argument("--fixed-gains", action="store_true", help="mask the gain outputs (manual-tuning oracle)")
    p.add_argument("--budget", type=int, help="environment steps (overrides ppo.total_steps)")
    p.add_argument("--resume", metavar="RUN_DIR", help="continue training from RUN_DIR/oracle.ckpt")
    p.add_argument("--out", help="run directory")
    p.set_defaults(fn=cmd_train_oracle)

    p = sub.add_parser("collect", help="roll out an oracle into a distillation dataset")
    _common(p)
    p.add_argument("--oracle", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_collect)

    p = sub.add_parser("train-student", help="train the action and/or gain module")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--module", choices=("action", "gain", "both"), default="both")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_train_student)

    p = sub.add_parser("eval", help="closed-loop evaluation of one method")
    _common(p)
    p.add_argument("--method", required=True, choices=("manual_tuning", "ours_no_pd", "ours"))
    p.add_argument("--action", required=True)
    p.add_argument("--gain")
    p.add_argument("--episodes", type=int)
    p.add_argument("--regime-scale", type=float, help="deployment gain regime endpoints relative to the bounds")
    p.add_argument("--disturbance", action="store_true", help="also run the disturbed block")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate over a mass/friction/scale grid")
    _common(p)
    p.add_argument("--method", default="ours", choices=("manual_tuning", "ours_no_pd", "ours"))
    p.add_argument("--action", required=True)
    p.add_argument("--gain")
    p.add_argument("--masses", help="comma-separated")
    p.add_argument("--frictions")
    p.add_argument("--scales")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("probe", help="gain-module predictions on ground-truth actions")
    _common(p, config=False)
    p.add_argument("--gain", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-joint", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("compare", help="table of methods x metrics from eval CSVs")
    _common(p, config=False)
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", help="write the table as CSV")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("pipeline", help="oracle -> collect -> students -> eval -> compare")
    _common(p)
    p.add_argument("--resume", metavar="RUN_DIR", help="reuse RUN_DIR, rerunning only stale stages")
    p.add_argument("--out", help="run directory")
    p.add_argument("--no-cache", action="store_true", help="ignore the shared stage cache")
    p.set_defaults(fn=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.deterministic:
        for var in THREAD_VARS:
            os.environ[var] = "1"
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    from dexgain.errors import ConfigError

    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure maps to one exit code
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
