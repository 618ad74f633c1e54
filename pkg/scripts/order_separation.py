"""Mean-pool vs concat-MLP vs ABM-C-top on the order-discrimination task, over several seeds.

    python3 scripts/order_separation.py --seeds 0 1 2 --epochs 8
"""

import argparse
import dataclasses
import json
import time

from abmkit.baselines import format_table
from abmkit.config import RunConfig
from abmkit.runner import run_training, with_seed
from abmkit.train import evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--json", help="write all rows to this file")
    args = ap.parse_args()

    base = RunConfig()
    base = dataclasses.replace(base, train=dataclasses.replace(base.train, epochs=args.epochs))
    rows = []
    for seed in args.seeds:
        for model in ("mean-pool", "concat-mlp", "abm"):
            cfg = with_seed(dataclasses.replace(base, model=model), seed)
            t0 = time.perf_counter()
            m, res, val = run_training(cfg)
            ev = evaluate(m, val, cfg.sampler)
            rows.append({"model": model if model != "abm" else "abm-C-top L=3", "seed": seed,
                         "frames": cfg.sampler.label, "params": m.param_count(), "top1": ev.top1,
                         "top5": ev.top5, "seconds": round(time.perf_counter() - t0, 1)})
            print(f"seed {seed} {rows[-1]['model']:<14} top1 {ev.top1:.4f} ({rows[-1]['seconds']} s)", flush=True)
    print()
    print(format_table(rows))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
