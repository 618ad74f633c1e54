"""Keyframe selection: score random one-frame-per-segment tuples, keep the most confident."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as tn
from .abm import AbmParams, AbmStack, Linear, VariantSpec
from .models import AbmClassifier, Model
from .sampler import segment_bounds


@dataclass
class KeyframeResult:
    frames: tuple[int, ...]
    score: float
    candidate: int

    def to_dict(self) -> dict:
        return {"frames": list(self.frames), "score": self.score, "candidate": self.candidate}


def snippet_predictor(model: Model, K: int) -> Callable[[np.ndarray], np.ndarray]:
    """Adapt a snippet model to single frames by repeating each frame K times."""
    def predict(frames: np.ndarray) -> np.ndarray:
        return model.predict(np.tile(frames, (1, 1, K)))
    return predict


def candidate_tuples(L: int, N: int, n_candidates: int, rng: np.random.Generator) -> np.ndarray:
    """[n_candidates, N] frame indices, one uniform draw per segment."""
    bounds = segment_bounds(L, N)
    cols = [rng.integers(s, max(e, s + 1), n_candidates) for s, e in bounds]
    return np.stack(cols, axis=1)


def select_keyframes(predict: Callable[[np.ndarray], np.ndarray], video: np.ndarray, n_candidates: int = 200,
                     N: int = 8, rng: np.random.Generator | None = None) -> KeyframeResult:
    """Return the candidate tuple with the highest top-1 softmax probability (first on ties)."""
    video = np.asarray(video)
    L = video.shape[0]
    if L < N:
        raise ValueError(f"video length {L} is shorter than the {N} segments")
    rng = np.random.default_rng() if rng is None else rng
    cands = candidate_tuples(L, N, n_candidates, rng)
    logits = np.asarray(predict(video[cands]))
    scores = tn.softmax(logits).max(axis=1)
    best = int(np.argmax(scores))
    return KeyframeResult(tuple(int(i) for i in cands[best]), float(scores[best]), best)


def planted_detector(direction: np.ndarray) -> AbmClassifier:
    """Two-class model whose confidence grows with mean relu(direction . x_t).

    One ABM-G layer with a constant-one auxiliary branch projects each frame
    onto ``direction``; the head maps that score to class 0.
    """
    d = np.asarray(direction, dtype=np.float64)
    C = d.size
    p = AbmParams.from_arrays(u=np.ones((1, 1)), a=d.reshape(C, 1), b=np.zeros((C, 1)),
                              bias_b=np.ones(1), activation="relu")
    head = Linear(tn.Tensor([[1.0], [0.0]]), tn.Tensor(np.zeros(2)))
    return AbmClassifier([], AbmStack([(VariantSpec("G"), p)]), head)


def planted_signal_trial(seed: int, L: int = 48, N: int = 8, C: int = 8, amplitude: float = 6.0,
                         noise: float = 0.5, n_candidates: int = 200) -> bool:
    """Plant one strong frame in a noise video; True if the selected tuple contains it."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(C)
    direction /= np.linalg.norm(direction)
    video = noise * rng.standard_normal((L, C))
    planted = int(rng.integers(0, L))
    video[planted] += amplitude * direction
    model = planted_detector(direction)
    res = select_keyframes(model.predict, video, n_candidates, N, rng)
    return planted in res.frames
