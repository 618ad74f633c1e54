"""Synthetic temporal classification tasks.

Every class shows the same multiset of prototype frames, so the label is
decided by temporal arrangement alone and mean pooling over time carries no
class information.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

TASKS = ("order-discrimination", "velocity-class", "palindrome")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    task: str = "order-discrimination"
    n_classes: int = 20
    frames: int = 24
    channels: int = 16
    noise_sigma: float = 0.3
    seed: int = 0
    n_train: int = 10_000
    n_val: int = 2_000
    n_stages: int = 8

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.n_classes < 2 or self.frames < 1 or self.channels < 1 or self.n_stages < 2:
            raise ValueError("n_classes >= 2, frames >= 1, channels >= 1 and n_stages >= 2 are required")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.frames % self.n_stages:
            raise ValueError(f"frames={self.frames} must be a multiple of n_stages={self.n_stages}")
        if self.task == "order-discrimination":
            if self.n_classes % 2:
                raise ValueError("order-discrimination pairs each ordering with its reverse; n_classes must be even")
            if self.n_classes > math.factorial(self.n_stages):
                raise ValueError("more classes than stage orderings")
        if self.task == "palindrome" and (self.n_classes != 2 or self.n_stages % 2 or self.n_stages < 4):
            raise ValueError("palindrome is binary and needs an even n_stages >= 4")
        if self.task == "velocity-class" and len(_speeds(self.n_stages)) < self.n_classes:
            raise ValueError(f"n_stages={self.n_stages} admits fewer than {self.n_classes} coprime speeds")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTaskSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown task keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Dataset:
    videos: np.ndarray   # [n, L, C]
    labels: np.ndarray   # [n]
    orders: np.ndarray   # [n_classes, L] prototype index per frame (phase 0 for velocity)
    prototypes: np.ndarray  # [n_stages, C]
    frame_protos: np.ndarray  # [n, L] prototype index behind every frame

    def __len__(self) -> int:
        return len(self.labels)


def _speeds(P: int) -> list[int]:
    return [s for s in range(1, P) if math.gcd(s, P) == 1]


def make_prototypes(spec: SyntheticTaskSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((spec.n_stages, spec.channels))


def class_orders(spec: SyntheticTaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Stage order of each class, [n_classes, n_stages] (velocity: [n_classes, frames])."""
    P = spec.n_stages
    if spec.task == "order-discrimination":
        orders: list[tuple[int, ...]] = [tuple(range(P)), tuple(range(P))[::-1]]
        seen = set(orders)
        while len(orders) < spec.n_classes:
            perm = tuple(int(v) for v in rng.permutation(P))
            if perm in seen or perm[::-1] in seen:
                continue
            orders += [perm, perm[::-1]]
            seen.update((perm, perm[::-1]))
        return np.asarray(orders)
    if spec.task == "palindrome":
        half = rng.permutation(P)[: P // 2]
        other = half[::-1].copy()
        while np.array_equal(other, half[::-1]):
            other = rng.permutation(half)
        sym = np.concatenate([half, half[::-1]])
        asym = np.concatenate([half, other])
        return np.stack([asym, sym])
    speeds = _speeds(P)[: spec.n_classes]
    t = np.arange(spec.frames)
    return np.stack([(s * t) % P for s in speeds])


def _stage_frames(order: np.ndarray, L: int) -> np.ndarray:
    return np.repeat(order, L // len(order))


def clean_video(spec: SyntheticTaskSpec, orders: np.ndarray, prototypes: np.ndarray, label: int,
                phase: int = 0) -> np.ndarray:
    if spec.task == "velocity-class":
        idx = (orders[label] + phase) % spec.n_stages
    else:
        idx = _stage_frames(orders[label], spec.frames)
    return prototypes[idx]


def _sample(spec, orders, prototypes, n, rng) -> Dataset:
    labels = rng.integers(0, spec.n_classes, n)
    phases = rng.integers(0, spec.n_stages, n)
    frame_orders = orders if spec.task == "velocity-class" else \
        np.stack([_stage_frames(o, spec.frames) for o in orders])
    protos = frame_orders[labels]
    if spec.task == "velocity-class":
        protos = (protos + phases[:, None]) % spec.n_stages
    clean = prototypes[protos]
    noisy = clean + spec.noise_sigma * rng.standard_normal(clean.shape)
    return Dataset(noisy, labels.astype(np.int64), frame_orders, prototypes, protos.astype(np.int64))


def generate_dataset(spec: SyntheticTaskSpec) -> tuple[Dataset, Dataset]:
    """Deterministic (train, val) split for ``spec.seed``."""
    root = np.random.default_rng(spec.seed)
    prototypes = make_prototypes(spec, root)
    orders = class_orders(spec, root)
    train_rng, val_rng = (np.random.default_rng([spec.seed, k]) for k in (1, 2))
    return (_sample(spec, orders, prototypes, spec.n_train, train_rng),
            _sample(spec, orders, prototypes, spec.n_val, val_rng))


def frame_classification_set(ds: Dataset, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Single noisy frames labelled by their prototype, for pretraining a frame net."""
    vid = rng.integers(0, len(ds), n)
    t = rng.integers(0, ds.videos.shape[1], n)
    return ds.videos[vid, t], ds.frame_protos[vid, t]


def nearest_prototype(frames: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    d = ((frames[:, None, :] - prototypes[None]) ** 2).sum(-1)
    return d.argmin(axis=1)
