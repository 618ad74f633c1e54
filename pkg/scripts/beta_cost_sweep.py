"""Multiply-adds and parameters of ABM-A stacks as the dynamic fraction beta varies.

Every analytic count is checked against an instrumented forward pass.
"""

import argparse

import numpy as np

from abmkit.flops import abm_a_model, checked_flops
from abmkit.sampler import SamplerSpec


def sweep(betas, channels=64, rank=64, steps=16, depth=3, n_classes=20, seed=0) -> list[dict]:
    rows = []
    for beta in betas:
        model = abm_a_model(beta, channels, channels, rank, n_classes, depth, rng=np.random.default_rng(seed))
        rep = checked_flops(model, SamplerSpec(steps, 1, 1), (steps, channels))
        rows.append({"beta": beta, "madds": rep.total, "instrumented": rep.instrumented, "params": rep.params})
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--betas", type=float, nargs="+", default=[0.0, 0.25, 0.5, 1.0])
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--rank", type=int, default=64)
    ap.add_argument("--steps", type=int, default=16)
    ap.add_argument("--depth", type=int, default=3)
    args = ap.parse_args()
    rows = sweep(args.betas, args.channels, args.rank, args.steps, args.depth)
    print(f"{'beta':>6} {'madds':>12} {'instrumented':>13} {'params':>9}")
    for r in rows:
        print(f"{r['beta']:>6} {r['madds']:>12} {r['instrumented']:>13} {r['params']:>9}")
    by = {r["beta"]: r["madds"] for r in rows}
    if 1.0 in by and 0.5 in by:
        print(f"ratio beta=1 / beta=1/2: {by[1.0] / by[0.5]:.3f}")


if __name__ == "__main__":
    main()
