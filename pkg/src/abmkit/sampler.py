"""Segment-based snippet sampling and shifting inference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

MODES = ("train-random", "test-center")


@dataclass(frozen=True)
class SamplerSpec:
    N: int = 8
    K: int = 3
    ST: int = 3
    mode: str = "test-center"

    def __post_init__(self):
        if self.N < 1 or self.K < 1 or self.ST < 1:
            raise ValueError(f"SamplerSpec needs N, K, ST >= 1, got {self.N}, {self.K}, {self.ST}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def label(self) -> str:
        return f"{self.N}x{self.K}"

    def to_dict(self) -> dict:
        return {"segments": self.N, "snippet": self.K, "shifts": self.ST}

    @classmethod
    def from_dict(cls, d: dict, mode: str = "test-center") -> "SamplerSpec":
        unknown = set(d) - {"segments", "snippet", "shifts"}
        if unknown:
            raise ValueError(f"unknown sampler keys: {sorted(unknown)}")
        return cls(d.get("segments", 8), d.get("snippet", 3), d.get("shifts", 3), mode)


@dataclass(frozen=True)
class SampledIndices:
    starts: tuple[int, ...]
    frames: tuple[int, ...]

    def array(self) -> np.ndarray:
        return np.asarray(self.frames, dtype=np.int64)


def segment_edges(L: int, N: int) -> np.ndarray:
    """N+1 boundaries; segment i covers [edges[i], edges[i+1]) with edges[i] = floor(i*L/N)."""
    if L < 1:
        raise ValueError(f"video length must be >= 1, got {L}")
    if N < 1:
        raise ValueError(f"segment count must be >= 1, got {N}")
    return (np.arange(N + 1, dtype=np.int64) * L) // N


def segment_bounds(L: int, N: int) -> list[tuple[int, int]]:
    """Segment i covers [floor(i*L/N), floor((i+1)*L/N))."""
    e = segment_edges(L, N).tolist()
    return list(zip(e[:-1], e[1:]))


def _snippet(start: int, seg_start: int, seg_end: int, K: int) -> list[int]:
    last = max(seg_start, seg_end - 1)
    return [min(start + k, last) for k in range(K)]


def center_start(seg_start: int, seg_end: int, K: int) -> int:
    return seg_start + max(0, seg_end - seg_start - K) // 2


def sample_snippet(bounds, K: int, mode: str, rng: np.random.Generator | None = None) -> SampledIndices:
    """K consecutive frames per segment; short segments repeat their final frame."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    starts, frames = [], []
    for s, e in bounds:
        if mode == "train-random":
            if rng is None:
                raise ValueError("train-random sampling needs an rng")
            start = int(rng.integers(s, max(s, e - K) + 1))
        else:
            start = center_start(s, e, K)
        starts.append(start)
        frames.extend(_snippet(start, s, e, K))
    return SampledIndices(tuple(starts), tuple(frames))


def shifting_offsets(seg_len: int, ST: int) -> list[int]:
    if ST < 1:
        raise ValueError(f"ST must be >= 1, got {ST}")
    return [i * seg_len // ST for i in range(ST)]


def shifted_samples(L: int, spec: SamplerSpec) -> list[SampledIndices]:
    """The ST shifted test samplings of a length-L video.

    Each offset moves the centre snippet forward and the start is clamped so
    the snippet stays inside its segment where possible.
    """
    bounds = segment_bounds(L, spec.N)
    out = []
    for i in range(spec.ST):
        starts, frames = [], []
        for s, e in bounds:
            off = shifting_offsets(e - s, spec.ST)[i]
            start = min(center_start(s, e, spec.K) + off, max(s, e - spec.K))
            starts.append(start)
            frames.extend(_snippet(start, s, e, spec.K))
        out.append(SampledIndices(tuple(starts), tuple(frames)))
    return out


def gather(videos: np.ndarray, frames: np.ndarray, spec: SamplerSpec) -> np.ndarray:
    """Model input [B, N, K*C] from videos [B, L, C] and frame indices [N*K] or [B, N*K]."""
    videos = np.asarray(videos)
    frames = np.asarray(frames)
    B, _, C = videos.shape
    if frames.ndim == 1:
        picked = videos[:, frames, :]
    else:
        picked = np.take_along_axis(videos, frames[:, :, None], axis=1)
    return picked.reshape(B, spec.N, spec.K * C)


def train_indices(L: int, spec: SamplerSpec, seed: int, epoch: int, video_ids) -> np.ndarray:
    """[B, N*K] random-snippet frame indices, one rng per (seed, epoch, video id)."""
    bounds = segment_bounds(L, spec.N)
    rows = [sample_snippet(bounds, spec.K, "train-random", np.random.default_rng([seed, epoch, int(v)])).frames
            for v in video_ids]
    return np.asarray(rows, dtype=np.int64)


def center_indices(L: int, spec: SamplerSpec) -> np.ndarray:
    return sample_snippet(segment_bounds(L, spec.N), spec.K, "test-center").array()


def aggregate_shifted(predict: Callable[[np.ndarray], np.ndarray], videos: np.ndarray,
                      spec: SamplerSpec) -> np.ndarray:
    """Mean of pre-softmax logits over the ST shifted samplings.

    ``videos`` is [B, L, C] (or a single [L, C] video); ``predict`` maps
    model inputs [B, N, K*C] to logits [B, classes].
    """
    videos = np.asarray(videos)
    single = videos.ndim == 2
    if single:
        videos = videos[None]
    samples = shifted_samples(videos.shape[1], spec)
    total = None
    for s in samples:
        logits = np.asarray(predict(gather(videos, s.array(), spec)))
        total = logits if total is None else total + logits
    out = total / len(samples)
    return out[0] if single else out
