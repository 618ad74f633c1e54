"""Pooling / concat baselines trained under the same sampler and budget as ABM runs."""

from __future__ import annotations

import json

import numpy as np

from .data import Dataset
from .models import Model, build_concat_mlp, build_mean_pool
from .sampler import SamplerSpec
from .train import TrainConfig, evaluate, train


def run_baselines(train_ds: Dataset, val_ds: Dataset, sampler: SamplerSpec, cfg: TrainConfig, *,
                  hidden: int = 128, extra: dict[str, Model] | None = None) -> list[dict]:
    """Train mean-pool and concat-MLP baselines (plus any ``extra`` models) and tabulate them."""
    C = train_ds.videos.shape[2]
    n_cls = int(train_ds.orders.shape[0])
    rng = np.random.default_rng([cfg.seed, 5])
    models: dict[str, Model] = {
        "mean-pool": build_mean_pool(C, n_cls, rng=rng),
        "concat-mlp": build_concat_mlp(sampler.K * C, sampler.N, n_cls, hidden, rng=rng),
    }
    models.update(extra or {})
    rows = []
    for name, model in models.items():
        res = train(model, cfg, train_ds, val_ds, sampler)
        ev = evaluate(model, val_ds, sampler)
        rows.append({
            "model": name, "frames": sampler.label, "epochs": cfg.epochs, "batch_size": cfg.batch_size,
            "lr": cfg.lr, "params": model.param_count(), "top1": ev.top1, "top5": ev.top5,
            "best_epoch": res.best_epoch,
        })
    return rows


def format_table(rows: list[dict]) -> str:
    cols = ["model", "frames", "params", "top1", "top5"]
    cells = [[_fmt(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{100 * v:.2f}"
    return str(v)


def table_json(rows: list[dict]) -> str:
    return json.dumps(rows, indent=2)
