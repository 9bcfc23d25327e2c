"""Expert-guided prompt tuning in the shared latent space.

A text embedding is pulled toward embeddings of augmented views of the
(attacked) image while a quadratic penalty keeps it near the original
instruction. The optimised vector is projected into the vocabulary space
and its nearest tokens become a suffix for the prompt.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedspace import DualEncoder, Projector, Vocabulary, as_vector, nn_search, project
from .errormap import as_image
from .errors import InvalidInput

CROP_SCALE = (0.8, 1.0)
FLIP_P = 0.5
NOISE_SIGMA = 0.01


@dataclass(frozen=True)
class EaptConfig:
    K: int = 3
    eta: float = 5e-3
    lam: float = 0.1
    tau_sem: float = 0.2
    n_aug: int = 4
    k_suffix: int = 7
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise InvalidInput("K must be >= 1")
        if not self.eta > 0:
            raise InvalidInput("eta must be > 0")
        if not self.lam >= 0:
            raise InvalidInput("lambda must be >= 0")
        if self.n_aug < 1:
            raise InvalidInput("n_aug must be >= 1")
        if self.k_suffix < 1:
            raise InvalidInput("k_suffix must be >= 1")


@dataclass(frozen=True)
class StepRecord:
    step: int
    consistency: float
    drift: float
    total: float
    grad_norm: float


@dataclass
class OptimTrace:
    """Losses at each iterate before its update, plus the final iterate."""

    steps: list[StepRecord] = field(default_factory=list)
    e_opt: np.ndarray | None = None
    final_consistency: float = math.nan
    final_drift: float = math.nan
    final_total: float = math.nan

    def __len__(self) -> int:
        return len(self.steps)

    def totals(self) -> list[float]:
        """Objective at e_0 .. e_K (K + 1 values)."""
        return [s.total for s in self.steps] + [self.final_total]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "consistency", "drift", "total", "grad_norm"])
        for s in self.steps:
            w.writerow([s.step, repr(s.consistency), repr(s.drift), repr(s.total), repr(s.grad_norm)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


@dataclass(frozen=True)
class RobustPrompt:
    base: str
    suffix: tuple[str, ...]
    composed: str


# -- augmentation ------------------------------------------------------------

def _resize_bilinear(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize of an ``(h0, w0, C)`` array (half-pixel centres)."""
    def weights(n_out, n_in):
        x = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
        lo = np.floor(x).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, x - lo

    r0, r1, tr = weights(h, img.shape[0])
    c0, c1, tc = weights(w, img.shape[1])
    rows = img[r0] * (1 - tr)[:, None, None] + img[r1] * tr[:, None, None]
    return rows[:, c0] * (1 - tc)[None, :, None] + rows[:, c1] * tc[None, :, None]


def augment(image, seed: int, index: int, *, crop: bool = True, flip: bool = True,
            noise_sigma: float = NOISE_SIGMA) -> np.ndarray:
    """Random resized crop, horizontal flip and Gaussian pixel noise.

    The draw is a pure function of ``(seed, index)``; every random number is
    consumed regardless of which stages are enabled.
    """
    image = as_image(image)
    h, w, _ = image.shape
    rng = np.random.default_rng([seed, index])
    scale = rng.uniform(*CROP_SCALE)
    side = math.sqrt(scale)
    ch, cw = max(1, round(h * side)), max(1, round(w * side))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    do_flip = rng.random() < FLIP_P
    noise = rng.standard_normal(image.shape)

    out = image
    if crop and (ch, cw) != (h, w):
        out = _resize_bilinear(out[top : top + ch, left : left + cw], h, w)
    if flip and do_flip:
        out = out[:, ::-1]
    if noise_sigma:
        out = out + noise_sigma * noise
    return np.clip(out, 0.0, 1.0)


# -- objective ---------------------------------------------------------------

def _stack(aug_embeddings) -> np.ndarray:
    A = np.asarray(aug_embeddings, dtype=np.float64)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.shape[0] == 0:
        raise InvalidInput("need at least one augmentation embedding")
    if np.any(np.linalg.norm(A, axis=1) == 0):
        raise InvalidInput("augmentation embeddings must be non-zero")
    return A


def consistency_loss(e_opt, aug_embeddings) -> float:
    """Mean of ``1 - cos(a_i, e_opt)`` over the augmentation embeddings."""
    e = as_vector(e_opt, nonzero=True)
    A = _stack(aug_embeddings)
    if A.shape[1] != e.size:
        raise InvalidInput("augmentation and optimised embeddings differ in dimension")
    cos = (A @ e) / (np.linalg.norm(A, axis=1) * np.linalg.norm(e))
    return float(np.mean(1.0 - cos))


def drift_loss(e_opt, e_init) -> float:
    e, e0 = as_vector(e_opt), as_vector(e_init)
    if e.shape != e0.shape:
        raise InvalidInput(f"dimension mismatch: {e.size} vs {e0.size}")
    d = e - e0
    return float(d @ d)


def eapt_loss(e_opt, aug_embeddings, e_init, lam: float) -> tuple[float, float, float]:
    """``(consistency, drift, consistency + lam * drift)``."""
    con = consistency_loss(e_opt, aug_embeddings)
    dr = drift_loss(e_opt, e_init)
    return con, dr, con + lam * dr


def eapt_gradient(e_opt, aug_embeddings, e_init, lam: float) -> np.ndarray:
    """Analytic gradient of the joint objective with respect to ``e_opt``."""
    e = as_vector(e_opt, nonzero=True)
    e0 = as_vector(e_init)
    A = _stack(aug_embeddings)
    if A.shape[1] != e.size or e0.size != e.size:
        raise InvalidInput("dimension mismatch in gradient inputs")
    ne = np.linalg.norm(e)
    na = np.linalg.norm(A, axis=1)
    # d cos(a, e)/de = a/(|a||e|) - (a.e) e/(|a||e|^3)
    dcos = A / (na[:, None] * ne) - np.outer((A @ e) / (na * ne**3), e)
    return -dcos.mean(axis=0) + 2.0 * lam * (e - e0)


def optimize_suffix_embedding(image, prompt: str, enc: DualEncoder, cfg: EaptConfig | None = None,
                              aug_embeddings=None) -> tuple[np.ndarray, OptimTrace]:
    """Run ``K`` gradient steps from the prompt embedding.

    By default every step draws ``n_aug`` fresh augmentations (indices
    ``k * n_aug + i``). Passing ``aug_embeddings`` fixes the augmentation
    set for all steps instead.
    """
    cfg = cfg or EaptConfig()
    e_init = np.asarray(enc.encode_text(prompt), dtype=np.float64)
    fixed = None if aug_embeddings is None else _stack(aug_embeddings)
    if fixed is None:
        image = as_image(image)
    e = e_init.copy()
    trace = OptimTrace()
    A = fixed
    for k in range(cfg.K):
        if fixed is None:
            A = np.stack([enc.encode_image(augment(image, cfg.seed, k * cfg.n_aug + i)) for i in range(cfg.n_aug)])
        con, dr, total = eapt_loss(e, A, e_init, cfg.lam)
        g = eapt_gradient(e, A, e_init, cfg.lam)
        trace.steps.append(StepRecord(k + 1, con, dr, total, float(np.linalg.norm(g))))
        e = e - cfg.eta * g
    trace.final_consistency, trace.final_drift, trace.final_total = eapt_loss(e, A, e_init, cfg.lam)
    trace.e_opt = e
    return e, trace


# -- discrete projection -----------------------------------------------------

def generate_suffix(e_opt, projector: Projector, vocab: Vocabulary, k_suffix: int = 7) -> list[str]:
    e_star = project(e_opt, projector)
    if e_star.size != vocab.dim:
        raise InvalidInput(f"projector outputs d={e_star.size}, vocabulary has d={vocab.dim}")
    return [tok for tok, _ in nn_search(e_star, vocab, k_suffix)]


def compose_prompt(prompt: str, suffix: Sequence[str]) -> RobustPrompt:
    suffix = tuple(suffix)
    composed = prompt if not suffix else prompt + " " + " ".join(suffix)
    return RobustPrompt(prompt, suffix, composed)


def run_eapt(image, prompt: str, enc: DualEncoder, projector: Projector, vocab: Vocabulary,
             cfg: EaptConfig | None = None) -> tuple[RobustPrompt, OptimTrace]:
    """Optimise, project and compose in one call (no semantic gate)."""
    cfg = cfg or EaptConfig()
    e_opt, trace = optimize_suffix_embedding(image, prompt, enc, cfg)
    suffix = generate_suffix(e_opt, projector, vocab, cfg.k_suffix)
    return compose_prompt(prompt, suffix), trace
