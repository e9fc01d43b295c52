"""Train adaptive-gain and fixed-gain oracles over several seeds and compare final rotation reward.

    python scripts/compare_oracles.py --task rotation --seeds 0 1 2 3 4 --steps 800000 --out runs/oracles
"""

import argparse
import dataclasses
import json
import statistics
import time
from pathlib import Path

from dexgain.config import load_config
from dexgain.controller import manual_gains
from dexgain.eval import evaluate_oracle
from dexgain.ppo import train_oracle


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--task", default="rotation", choices=("rotation", "flipping"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--steps", type=int, default=800_000)
    ap.add_argument("--eval-episodes", type=int, default=20)
    ap.add_argument("--modes", nargs="+", default=["adaptive", "fixed"], choices=("adaptive", "fixed"))
    ap.add_argument("--set", action="append", default=[], help="config override a.b=value")
    ap.add_argument("--out", default="runs/oracles")
    args = ap.parse_args()

    cfg = load_config(overrides=[f"task.task={args.task}", *args.set])
    out = Path(args.out)
    results = []
    for seed in args.seeds:
        for mode in args.modes:
            t0 = time.time()
            ppo = dataclasses.replace(cfg.ppo, seed=seed, total_steps=args.steps)
            gains = manual_gains(cfg.scene.num_joints) if mode == "fixed" else None
            res = train_oracle(cfg.task, cfg.scene, ppo, cfg.bounds, fixed_gains=gains, out_dir=out / f"{mode}{seed}")
            rep = evaluate_oracle(res.policy, cfg.task, cfg.scene, args.eval_episodes, seed=cfg.eval.seed)
            row = {"mode": mode, "seed": seed, "curve_rot": res.curve[-1]["rot_term"] if res.curve else None,
                   "eval_rotr": rep.mean("rotr"), "eval_ttf": rep.mean("ttf"), "seconds": round(time.time() - t0, 1)}
            print(json.dumps(row), flush=True)
            results.append(row)
    for mode in args.modes:
        rows = [r for r in results if r["mode"] == mode]
        print(f"{mode:<9} median final curve rot={statistics.median(r['curve_rot'] for r in rows):.2f} "
              f"median eval RotR={statistics.median(r['eval_rotr'] for r in rows):.2f}")


if __name__ == "__main__":
    main()
