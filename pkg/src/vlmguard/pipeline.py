"""End-to-end defense: detect, then mask (local) or tune the prompt (global)."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import sentinel
from .eapt import EaptConfig, OptimTrace, RobustPrompt, compose_prompt, generate_suffix, optimize_suffix_embedding
from .embedspace import DualEncoder, Projector, Vocabulary, semantic_verification
from .errormap import DEFAULT_GRID, BlockGrid, ErrorMap, as_image, block_losses, get_reconstructor
from .errors import InvalidInput, ParseError
from .purifier import DEFAULT_DILATION, DEFAULT_GRAY, apply_gray_mask, build_mask
from .sentinel import DetectionMetrics, GateThresholds, Verdict, VerdictClass


@dataclass(frozen=True)
class PipelineConfig:
    thresholds: GateThresholds = field(default_factory=GateThresholds)
    eapt: EaptConfig = field(default_factory=EaptConfig)
    grid_rows: int = DEFAULT_GRID
    grid_cols: int = DEFAULT_GRID
    reconstructor: str = "lowpass"
    gray: float = DEFAULT_GRAY
    dilation: int = DEFAULT_DILATION
    connectivity: int = 8

    def __post_init__(self):
        if self.grid_rows < 2 or self.grid_cols < 2:
            raise InvalidInput("grid needs at least 2x2 blocks")
        if self.connectivity not in (4, 8):
            raise InvalidInput("connectivity must be 4 or 8")
        if not 0.0 <= self.gray <= 1.0:
            raise InvalidInput("gray must lie in [0, 1]")
        if self.dilation < 0:
            raise InvalidInput("dilation must be >= 0")
        get_reconstructor(self.reconstructor)

    def grid_for(self, image: np.ndarray) -> BlockGrid:
        return BlockGrid.for_image(image.shape[0], image.shape[1], self.grid_rows, self.grid_cols)

    # -- flat key/value form ---------------------------------------------

    def to_flat(self) -> dict[str, object]:
        th, ea = self.thresholds, self.eapt
        return {
            "t_s": th.t_s, "t_cc1": th.t_cc1, "t_cc2": th.t_cc2, "alpha": th.alpha, "beta": th.beta,
            "K": ea.K, "eta": ea.eta, "lambda": ea.lam, "tau_sem": ea.tau_sem, "n_aug": ea.n_aug,
            "k_suffix": ea.k_suffix, "seed": ea.seed,
            "grid_rows": self.grid_rows, "grid_cols": self.grid_cols, "reconstructor": self.reconstructor,
            "gray": self.gray, "dilation": self.dilation, "connectivity": self.connectivity,
        }

    @classmethod
    def from_flat(cls, values: dict[str, object]) -> "PipelineConfig":
        base = cls().to_flat()
        unknown = set(values) - set(base)
        if unknown:
            raise ParseError(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged = {**base, **values}
        try:
            conv = {k: type(base[k])(merged[k]) if not isinstance(base[k], int) else _as_int(merged[k])
                    for k in base}
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad config value: {exc}") from None
        try:
            return cls(
                thresholds=GateThresholds(conv["t_s"], conv["t_cc1"], conv["t_cc2"], conv["alpha"], conv["beta"]),
                eapt=EaptConfig(conv["K"], conv["eta"], conv["lambda"], conv["tau_sem"], conv["n_aug"],
                                conv["k_suffix"], conv["seed"]),
                grid_rows=conv["grid_rows"], grid_cols=conv["grid_cols"], reconstructor=conv["reconstructor"],
                gray=conv["gray"], dilation=conv["dilation"], connectivity=conv["connectivity"],
            )
        except InvalidInput as exc:
            raise ParseError(str(exc)) from exc

    def replace(self, **flat) -> "PipelineConfig":
        return PipelineConfig.from_flat({**self.to_flat(), **flat})

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_flat().items())


def _as_int(v) -> int:
    if isinstance(v, str):
        v = v.strip()
        f = float(v)
    else:
        f = float(v)
    if f != int(f):
        raise ValueError(f"expected an integer, got {v!r}")
    return int(f)


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    values: dict[str, object] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ParseError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PipelineConfig.from_flat(values)


# -- outcome -----------------------------------------------------------------

@dataclass
class DefenseOutcome:
    verdict: Verdict
    prompt: str
    purified_frames: list[np.ndarray] | None = None
    robust_prompt: RobustPrompt | None = None
    v_sem: float | None = None
    trace: OptimTrace | None = None
    representative: int = 0
    error_maps: list[ErrorMap] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def purified_image(self) -> np.ndarray | None:
        if self.purified_frames is None:
            return None
        return self.purified_frames[self.representative]

    @property
    def final_prompt(self) -> str:
        return self.robust_prompt.composed if self.robust_prompt else self.prompt

    @property
    def suffix(self) -> tuple[str, ...]:
        return self.robust_prompt.suffix if self.robust_prompt else ()

    def record(self, include_timings: bool = False) -> dict[str, object]:
        """Flat, text-serialisable summary (timings excluded unless asked for)."""
        m = self.verdict.metrics
        rec: dict[str, object] = {
            "verdict": self.verdict.cls.value,
            **m.as_dict(),
            "attack_score": self.verdict.attack_score,
            "v_sem": self.v_sem,
            "suffix": " ".join(self.suffix),
        }
        if include_timings:
            rec.update({f"time_{k}": v for k, v in self.timings.items()})
        return rec

    def to_text(self, include_timings: bool = False) -> str:
        return "".join(f"{k}: {_fmt(v)}\n" for k, v in self.record(include_timings).items())


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def echo_responder(frames: Sequence[np.ndarray], prompt: str):
    """Placeholder for the downstream VLM call: hands back its inputs."""
    return list(frames), prompt


def respond(outcome: DefenseOutcome, frames: Sequence[np.ndarray],
            responder: Callable = echo_responder):
    images = outcome.purified_frames if outcome.purified_frames is not None else list(frames)
    return responder(images, outcome.final_prompt)


# -- detection ---------------------------------------------------------------

def frame_error_maps(frames: Sequence[np.ndarray], cfg: PipelineConfig) -> list[ErrorMap]:
    recon = get_reconstructor(cfg.reconstructor)
    maps = []
    for frame in frames:
        grid = cfg.grid_for(frame)
        out = recon(frame)
        maps.append(block_losses(frame, out, grid))
    return maps


def detect_frames(maps: Sequence[ErrorMap], cfg: PipelineConfig) -> tuple[Verdict, int]:
    """Pool magnitude over all frames; spatial metrics from the max-C_enh frame."""
    th = cfg.thresholds
    pooled = np.concatenate([m.losses for m in maps])
    m_anom = sentinel.anomaly_magnitude(pooled, th.alpha)
    best, best_idx = None, 0
    for i, emap in enumerate(maps):
        spatial = sentinel.spatial_metrics(emap, th.beta, cfg.connectivity)
        if best is None or spatial[3] > best[3]:
            best, best_idx = spatial, i
    h, h_norm, c_local, c_enh, largest = best
    metrics = DetectionMetrics(m_anom, h, h_norm, c_local, c_enh, largest)
    return sentinel.dual_gate(metrics, th), best_idx


def defend(frames, prompt: str, cfg: PipelineConfig | None = None, enc: DualEncoder | None = None,
           vocab: Vocabulary | None = None, proj: Projector | None = None) -> DefenseOutcome:
    """Triage ``frames`` and apply the matching countermeasure.

    ``enc``, ``vocab`` and ``proj`` are only touched on the global-attack
    branch; they may be omitted when no prompt tuning can occur.
    """
    cfg = cfg or PipelineConfig()
    if isinstance(frames, np.ndarray) and frames.ndim in (2, 3):
        frames = [frames]
    frames = [as_image(f) for f in frames]
    if not frames:
        raise InvalidInput("defend needs at least one frame")
    timings = {}

    t0 = time.perf_counter()
    maps = frame_error_maps(frames, cfg)
    t1 = time.perf_counter()
    verdict, rep = detect_frames(maps, cfg)
    t2 = time.perf_counter()
    timings["reconstruct"] = t1 - t0
    timings["detect"] = t2 - t1
    outcome = DefenseOutcome(verdict, prompt, representative=rep, error_maps=maps, timings=timings)

    if verdict.cls is VerdictClass.LOCAL:
        grid = cfg.grid_for(frames[rep])
        mask = build_mask(verdict.metrics.largest_component, grid, cfg.dilation)
        outcome.purified_frames = [
            apply_gray_mask(f, mask if f.shape[:2] == mask.shape else build_mask(
                verdict.metrics.largest_component, cfg.grid_for(f), cfg.dilation), cfg.gray)
            for f in frames
        ]
        timings["purify"] = time.perf_counter() - t2
    elif verdict.cls is VerdictClass.GLOBAL:
        if enc is None:
            raise InvalidInput("a dual encoder is required to handle a global attack")
        last = frames[-1]
        outcome.v_sem = semantic_verification(last, prompt, enc)
        if outcome.v_sem < cfg.eapt.tau_sem:
            if vocab is None:
                raise InvalidInput("a vocabulary is required for prompt tuning")
            proj = proj or Projector.identity(vocab.dim)
            e_opt, trace = optimize_suffix_embedding(last, prompt, enc, cfg.eapt)
            suffix = generate_suffix(e_opt, proj, vocab, cfg.eapt.k_suffix)
            outcome.robust_prompt = compose_prompt(prompt, suffix)
            outcome.trace = trace
        timings["eapt"] = time.perf_counter() - t2
    return outcome
