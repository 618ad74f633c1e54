"""Run configuration: one JSON document per experiment, strictly validated."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .abm import VariantSpec
from .data import SyntheticTaskSpec
from .gradcheck import DEFAULT_CASES
from .sampler import SamplerSpec
from .train import TrainConfig

MODELS = ("abm", "mean-pool", "concat-mlp")


def _strict(cls, d: dict, section: str) -> dict:
    allowed = {f.name for f in fields(cls)}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"{section}: unknown keys {sorted(unknown)}")
    return d


@dataclass(frozen=True)
class GradcheckSettings:
    cases: tuple[str, ...] = DEFAULT_CASES
    seeds: int = 20
    eps: float = 1e-5
    tol: float = 1e-4


@dataclass(frozen=True)
class BenchSettings:
    betas: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0)
    channels: int = 64
    rank: int = 64
    steps: int = 16
    depth: int = 3
    n_classes: int = 20
    timing_repeats: int = 20


@dataclass(frozen=True)
class KeyframeSettings:
    n_candidates: int = 200
    n_videos: int = 16


@dataclass(frozen=True)
class RunConfig:
    model: str = "abm"
    variant: VariantSpec = field(default_factory=VariantSpec)
    depth: int = 3
    placement: str = "top"
    temporal_pool_after: int | None = None
    width: int = 32
    rank: int | None = None
    hidden: int = 64
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    task: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.001, epochs=8))
    gradcheck: GradcheckSettings = field(default_factory=GradcheckSettings)
    bench: BenchSettings = field(default_factory=BenchSettings)
    keyframes: KeyframeSettings = field(default_factory=KeyframeSettings)
    seed: int = 0
    out: str = "runs/default"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.placement not in ("top", "implanted"):
            raise ValueError("placement must be 'top' or 'implanted'")
        if self.depth < 0 or self.width < 1 or self.hidden < 1:
            raise ValueError("depth >= 0, width >= 1, hidden >= 1 required")
        if self.temporal_pool_after is not None and self.placement != "implanted":
            raise ValueError("temporal_pool_after is only valid for implanted placement")

    @property
    def beta(self) -> float:
        return self.variant.beta

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "variant": self.variant.to_dict(),
            "depth": self.depth,
            "placement": self.placement,
            "temporal_pool_after": self.temporal_pool_after,
            "width": self.width,
            "rank": self.rank,
            "hidden": self.hidden,
            "sampler": self.sampler.to_dict(),
            "task": self.task.to_dict(),
            "train": self.train.to_dict(),
            "gradcheck": {**self.gradcheck.__dict__, "cases": list(self.gradcheck.cases)},
            "bench": {**self.bench.__dict__, "betas": list(self.bench.betas)},
            "keyframes": dict(self.keyframes.__dict__),
            "seed": self.seed,
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(_strict(cls, d, "config"))
        if "variant" in d:
            d["variant"] = VariantSpec.from_dict(d["variant"])
        if "sampler" in d:
            d["sampler"] = SamplerSpec.from_dict(d["sampler"])
        if "task" in d:
            d["task"] = SyntheticTaskSpec.from_dict(d["task"])
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        if "gradcheck" in d:
            g = dict(_strict(GradcheckSettings, d["gradcheck"], "gradcheck"))
            if "cases" in g:
                g["cases"] = tuple(g["cases"])
            d["gradcheck"] = GradcheckSettings(**g)
        if "bench" in d:
            b = dict(_strict(BenchSettings, d["bench"], "bench"))
            if "betas" in b:
                b["betas"] = tuple(b["betas"])
            d["bench"] = BenchSettings(**b)
        if "keyframes" in d:
            d["keyframes"] = KeyframeSettings(**_strict(KeyframeSettings, d["keyframes"], "keyframes"))
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def hash(self) -> str:
        """Digest of everything that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_json(Path(path).read_text())


def apply_override(d: dict, key: str, raw: str) -> None:
    """Set ``a.b.c=value`` in a nested dict; the value is parsed as JSON when possible."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = d
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ValueError(f"override {key!r}: {p!r} is not a config section")
        node = node[p]
    node[parts[-1]] = value
