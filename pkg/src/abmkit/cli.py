"""``abmkit`` command line: gradcheck, surgery-verify, train, eval, bench, keyframes.

Every subcommand reads an optional JSON RunConfig (``--config``), applies
``--set section.key=value`` overrides, writes its artifacts under ``--out`` and
records them in ``<out>/manifest.json`` together with the config hash.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .abm import VariantSpec
from .checkpoint import CheckpointError
from .config import RunConfig, apply_override, load_config
from .train import TrainingDiverged

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

logger = logging.getLogger("abmkit")


class Run:
    """Output directory bookkeeping for one subcommand invocation."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.artifacts: list[str] = []
        out.mkdir(parents=True, exist_ok=True)
        self.write_json("config.json", cfg.to_dict())

    def write_json(self, name: str, obj) -> Path:
        path = self.out / name
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        self.record(path)
        return path

    def record(self, path: Path) -> None:
        rel = str(Path(path).resolve().relative_to(self.out.resolve()))
        if rel not in self.artifacts:
            self.artifacts.append(rel)

    def finish(self, status: str) -> None:
        manifest = {"command": self.command, "config_hash": self.cfg.hash(), "status": status,
                    "artifacts": sorted(self.artifacts), "version": __version__}
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _thread_limit():
    n = os.environ.get("ABMKIT_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def resolve_config(args) -> RunConfig:
    base = load_config(args.config).to_dict()
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        apply_override(base, key, value)
    if args.seed is not None:
        base["seed"] = args.seed
        base["task"]["seed"] = args.seed
        base["train"]["seed"] = args.seed
    if args.out is not None:
        base["out"] = args.out
    return RunConfig.from_dict(base)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gradcheck(cfg: RunConfig, run: Run, args) -> int:
    from .gradcheck import run_suite

    g = cfg.gradcheck
    cases = args.cases.split(",") if args.cases is not None else g.cases
    cases = [c for c in cases if c]
    report = run_suite(cases, seeds=g.seeds, eps=g.eps, tol=g.tol)
    run.write_json("gradcheck.json", report.to_dict())
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_surgery_verify(cfg: RunConfig, run: Run, args) -> int:
    from .surgery import TwoLayerNet, load_net, save_net, surgery_verify

    kind = args.variant or cfg.variant.kind
    target = None if kind == "G" else VariantSpec(kind, beta=args.beta if args.beta is not None else cfg.variant.beta)
    if args.checkpoint:
        net, params = load_net(args.checkpoint)
    else:
        rng = np.random.default_rng([cfg.seed, 11])
        net, params = TwoLayerNet.random(cfg.task.channels, cfg.hidden, cfg.width, rng=rng), None
        run.record(save_net(run.out / "source_net", net))
    report = surgery_verify(net, target, args.probes, rng=np.random.default_rng([cfg.seed, 12]), params=params)
    run.write_json("surgery_report.json", json.loads(report.to_json()))
    print(report.to_json())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_train(cfg: RunConfig, run: Run, args) -> int:
    from .runner import run_training

    _, res, _ = run_training(cfg, run.out)
    if res.checkpoint is not None:
        run.record(res.checkpoint)
        for f in res.checkpoint.parent.iterdir():
            run.record(f)
    run.record(run.out / "metrics.csv")
    summary = {"best_val_top1": res.best_val_top1, "best_epoch": res.best_epoch,
               "checkpoint": str(res.checkpoint) if res.checkpoint else None}
    run.write_json("train_summary.json", summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_eval(cfg: RunConfig, run: Run, args) -> int:
    from .data import generate_dataset
    from .models import load_model
    from .train import evaluate

    manifest = Path(args.checkpoint) if args.checkpoint else Path(cfg.out) / "checkpoint" / "manifest.json"
    model = load_model(manifest)
    _, val_ds = generate_dataset(cfg.task)
    plain = evaluate(model, val_ds, cfg.sampler, shifted=False)
    shifted = evaluate(model, val_ds, cfg.sampler, shifted=True)
    result = {"checkpoint": str(manifest), "shifts": cfg.sampler.ST,
              "test": plain.__dict__, "shifted": shifted.__dict__}
    run.write_json("eval.json", result)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_bench(cfg: RunConfig, run: Run, args) -> int:
    from .flops import abm_a_model, checked_flops
    from .sampler import SamplerSpec

    b = cfg.bench
    sampler = SamplerSpec(b.steps, 1, cfg.sampler.ST)
    rows, ok = [], True
    for beta in b.betas:
        model = abm_a_model(beta, b.channels, b.channels, b.rank, b.n_classes, b.depth,
                            rng=np.random.default_rng([cfg.seed, 21]))
        rep = checked_flops(model, sampler, (b.steps, b.channels))
        x = np.random.default_rng(0).standard_normal((1, b.steps, b.channels))
        t0 = time.perf_counter()
        for _ in range(b.timing_repeats):
            model.predict(x)
        per_call = (time.perf_counter() - t0) / b.timing_repeats
        match = rep.instrumented == rep.total
        ok &= match
        rows.append({"beta": beta, **rep.to_dict(), "analytic_matches_instrumented": match,
                     "seconds_per_video": per_call})
    totals = [r["total"] for r in rows]
    monotone = all(x < y for x, y in zip(totals, totals[1:])) if list(b.betas) == sorted(b.betas) else None
    ok &= monotone is not False
    by_beta = {r["beta"]: r["total"] for r in rows}
    ratio = by_beta[1.0] / by_beta[0.5] if 1.0 in by_beta and 0.5 in by_beta else None
    result = {"rows": rows, "strictly_increasing": monotone, "ratio_beta1_to_half": ratio, "passed": bool(ok)}
    run.write_json("bench.json", result)
    for r in rows:
        print(f"beta={r['beta']:<5} madds={r['total']:>10} instrumented={r['instrumented']:>10} "
              f"params={r['params']:>8} {1e3 * r['seconds_per_video']:.3f} ms/video")
    if ratio is not None:
        print(f"FLOPs ratio beta=1 : beta=1/2 = {ratio:.3f}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_keyframes(cfg: RunConfig, run: Run, args) -> int:
    from .keyframes import planted_signal_trial, select_keyframes, snippet_predictor

    k = cfg.keyframes
    rng = np.random.default_rng([cfg.seed, 31])
    if args.checkpoint:
        from .data import generate_dataset
        from .models import load_model

        model = load_model(args.checkpoint)
        _, val_ds = generate_dataset(cfg.task)
        predict = snippet_predictor(model, cfg.sampler.K)
        picks = []
        for i in range(min(k.n_videos, len(val_ds))):
            res = select_keyframes(predict, val_ds.videos[i], k.n_candidates, cfg.sampler.N, rng)
            picks.append({"video": i, "label": int(val_ds.labels[i]), **res.to_dict()})
        run.write_json("keyframes.json", picks)
        print(json.dumps(picks))
        return EXIT_OK
    hits = [planted_signal_trial(cfg.seed * 100_000 + s, N=cfg.sampler.N, n_candidates=k.n_candidates)
            for s in range(k.n_videos)]
    result = {"trials": len(hits), "recovered": int(sum(hits)), "rate": float(np.mean(hits))}
    run.write_json("keyframes.json", result)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "gradcheck": (cmd_gradcheck, "run the finite-difference gradient suite"),
    "surgery-verify": (cmd_surgery_verify, "check that a surgically built ABM reproduces its source net"),
    "train": (cmd_train, "train the configured model on the synthetic task"),
    "eval": (cmd_eval, "evaluate a checkpoint with and without shifting inference"),
    "bench": (cmd_bench, "FLOPs / parameter / timing sweep over beta"),
    "keyframes": (cmd_keyframes, "keyframe selection on a checkpoint or planted-signal videos"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abmkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"abmkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="RunConfig JSON file (defaults are used when omitted)")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="seed for task generation, init and training")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field, e.g. --set train.epochs=4 (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if name == "gradcheck":
            p.add_argument("--cases", help="comma-separated cases (default: all variants and stack3)")
        if name in ("surgery-verify", "eval", "keyframes"):
            p.add_argument("--checkpoint", help="path to a checkpoint manifest.json")
        if name == "surgery-verify":
            p.add_argument("--variant", choices=["G", "C", "A"], help="target variant (default: config)")
            p.add_argument("--beta", type=float, help="dynamic fraction for ABM-A")
            p.add_argument("--probes", type=int, default=100, help="number of random probes (default 100)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ValueError, TypeError, OSError) as exc:
        print(f"abmkit: invalid config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    fn, _ = COMMANDS[args.command]
    run = Run(args.command, cfg, Path(cfg.out))
    try:
        with _thread_limit():
            code = fn(cfg, run, args)
    except FileNotFoundError as exc:
        print(f"abmkit: file error: {exc}", file=sys.stderr)
        code = EXIT_ERROR
    except (ValueError, CheckpointError) as exc:
        print(f"abmkit: {exc}", file=sys.stderr)
        code = EXIT_ERROR
    except TrainingDiverged as exc:
        print(f"abmkit: training diverged: {exc}", file=sys.stderr)
        code = EXIT_FAIL
    run.finish("ok" if code == EXIT_OK else "failed")
    return code


if __name__ == "__main__":
    sys.exit(main())
