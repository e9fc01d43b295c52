"""Distill students from trained oracles, then evaluate every method under nominal and shifted gain regimes.

    python scripts/distill_and_evaluate.py --oracle runs/oracles/adaptive0/oracle.ckpt \
        --fixed-oracle runs/oracles/fixed0/oracle.ckpt --episodes 500 --epochs 6
"""

import argparse

import numpy as np
from scipy.stats import spearmanr

from dexgain.config import load_config
from dexgain.controller import GainMap
from dexgain.distill import NoiseSpec, collect_dataset, probe_gain_module, train_action_module, train_gain_module
from dexgain.dynamics import PhysProps
from dexgain.eval import EvalConfig, compare, evaluate_oracle, run_eval
from dexgain.ppo import OraclePolicy


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--oracle", required=True, help="adaptive-gain oracle checkpoint")
    ap.add_argument("--fixed-oracle", help="fixed-gain oracle checkpoint (enables manual_tuning)")
    ap.add_argument("--episodes", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--eval-episodes", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[])
    args = ap.parse_args()

    cfg = load_config(overrides=args.set)
    task, scene, bounds = cfg.task, cfg.scene, cfg.bounds
    noise = NoiseSpec(cfg.distill.sigma_q)
    oracle = OraclePolicy.load(args.oracle)
    ds = collect_dataset(oracle, task, scene, args.episodes, seed=args.seed + 1)
    print("dataset", len(ds), ds.manifest["stats"])
    action = train_action_module(ds, noise, epochs=args.epochs, seed=args.seed + 2).module
    gain = train_gain_module(ds, noise, epochs=args.epochs, seed=args.seed + 3).module
    ckpts = {"ours": {"action": action, "gain": gain}, "ours_no_pd": {"action": action}}
    if args.fixed_oracle:
        fixed = OraclePolicy.load(args.fixed_oracle)
        fds = collect_dataset(fixed, task, scene, args.episodes, seed=args.seed + 1)
        ckpts["manual_tuning"] = {"action": train_action_module(fds, noise, epochs=args.epochs,
                                                                seed=args.seed + 2).module}

    orep = evaluate_oracle(oracle, task, scene, args.eval_episodes, seed=cfg.eval.seed)
    print(f"oracle RotR {orep.mean('rotr'):.2f}")
    for scale in (1.0, 0.8, 1.2):
        gm = None if scale == 1.0 else GainMap.from_ranges(bounds, bounds.scaled(scale), scene.num_joints)
        reports = [run_eval(EvalConfig(method=m, n_episodes=args.eval_episodes, seed=cfg.eval.seed, gain_map=gm),
                            task, scene, ck, bounds) for m, ck in ckpts.items()]
        print(f"gain regime scale {scale}")
        print(compare(reports))

    r = task.randomization
    masses = np.linspace(*r.mass, 5)
    kp = []
    for m in masses:
        props = PhysProps(scale=float(np.mean(r.scale)), mass=float(m), friction=float(np.mean(r.friction)))
        probe_ds = collect_dataset(oracle, task, scene, 10, seed=77, props_override=props)
        kp.append(np.mean([row["kp"] for row in probe_gain_module(gain, probe_ds)]))
    print("probe mass ->", dict(zip(np.round(masses, 4).tolist(), np.round(kp, 3).tolist())),
          "spearman", spearmanr(masses, kp)[0])


if __name__ == "__main__":
    main()
