"""Reconstruction-error statistics and the two-stage clean/global/local gate."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errormap import ErrorMap
from .errors import InvalidInput

EPS_TOTAL = 1e-9

Block = tuple[int, int]
Component = frozenset  # frozenset[Block]

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


class VerdictClass(str, enum.Enum):
    CLEAN = "Clean"
    GLOBAL = "GlobalAttack"
    LOCAL = "LocalAttack"

    def __str__(self) -> str:
        return self.value

    @property
    def is_attack(self) -> bool:
        return self is not VerdictClass.CLEAN

    @classmethod
    def parse(cls, text: str) -> "VerdictClass":
        key = text.strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "clean": cls.CLEAN,
            "globalattack": cls.GLOBAL,
            "global": cls.GLOBAL,
            "localattack": cls.LOCAL,
            "local": cls.LOCAL,
        }
        try:
            return aliases[key]
        except KeyError:
            raise InvalidInput(f"unknown class {text!r}") from None


@dataclass(frozen=True)
class GateThresholds:
    t_s: float = 0.2
    t_cc1: float = 0.03
    t_cc2: float = 0.02
    alpha: float = 0.95
    beta: float = 0.8

    def __post_init__(self):
        for name in ("t_s", "t_cc1", "t_cc2", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidInput(f"{name} must be a positive finite number, got {v}")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInput(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.t_cc2 > self.t_cc1:
            raise InvalidInput(f"t_cc2 ({self.t_cc2}) must not exceed t_cc1 ({self.t_cc1})")


@dataclass(frozen=True)
class DetectionMetrics:
    m_anom: float
    h_energy: float
    h_norm: float
    c_local: float
    c_enh: float
    largest_component: frozenset = field(default_factory=frozenset)

    def as_dict(self) -> dict:
        return {
            "m_anom": self.m_anom,
            "h_energy": self.h_energy,
            "h_norm": self.h_norm,
            "c_local": self.c_local,
            "c_enh": self.c_enh,
        }


@dataclass(frozen=True)
class Verdict:
    cls: VerdictClass
    metrics: DetectionMetrics
    attack_score: float

    def __post_init__(self):
        if self.cls is VerdictClass.LOCAL and not self.metrics.largest_component:
            raise InvalidInput("a LocalAttack verdict needs a non-empty component")


# -- magnitude ---------------------------------------------------------------

def var_index(n: int, alpha: float) -> int:
    """1-based rank of the empirical alpha-quantile, ``ceil(alpha * n)``."""
    # tolerance absorbs float error in alpha*n (0.95 * 20 -> 18.999...)
    k = math.ceil(alpha * n - 1e-9)
    return min(max(k, 1), n)


def anomaly_magnitude(losses: Iterable[float], alpha: float = 0.95) -> float:
    """Mean of the losses at or above their empirical alpha-quantile (CVaR).

    The quantile is the ``ceil(alpha * n)``-th smallest loss, so the tail is
    never empty and a single loss returns itself.
    """
    arr = np.asarray(list(losses) if not isinstance(losses, np.ndarray) else losses, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InvalidInput("anomaly_magnitude needs at least one loss")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidInput("losses must be finite and non-negative")
    if not 0.0 < alpha < 1.0:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha}")
    ordered = np.sort(arr)
    var = ordered[var_index(arr.size, alpha) - 1]
    return float(ordered[ordered >= var].mean())


# -- spatial statistics ------------------------------------------------------

def energy_entropy(emap: ErrorMap) -> tuple[float, float]:
    """Shannon entropy (nats) of the normalised loss distribution and its ln|B|-normalised value."""
    losses = emap.losses
    n = losses.size
    h_max = math.log(n)
    total = losses.sum()
    if total < EPS_TOTAL:
        return h_max, 1.0
    e = losses[losses > 0] / total
    h = float(-(e * np.log(e)).sum())
    h = min(max(h, 0.0), h_max)
    return h, (h / h_max if h_max > 0 else 0.0)


def active_mask(emap: ErrorMap) -> np.ndarray:
    """Blocks whose loss strictly exceeds mean + one (population) std."""
    g = emap.grid
    return g > g.mean() + g.std()


def connected_components(mask, connectivity: int = 8, losses=None) -> list[frozenset]:
    """Maximal connected sets of active blocks.

    Ordered by decreasing loss sum (block count when ``losses`` is None),
    ties broken by each component's first block in raster order.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise InvalidInput("mask must be 2-D")
    try:
        structure = _STRUCTURES[connectivity]
    except KeyError:
        raise InvalidInput(f"connectivity must be 4 or 8, got {connectivity}") from None
    weights = np.ones(mask.shape) if losses is None else np.asarray(losses, dtype=np.float64)
    if weights.shape != mask.shape:
        raise InvalidInput("losses must match the mask shape")
    labels, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return []
    comps = []
    for lab in range(1, n + 1):
        rr, cc = np.nonzero(labels == lab)
        blocks = frozenset(zip(rr.tolist(), cc.tolist()))
        comps.append((-float(weights[rr, cc].sum()), min(blocks), blocks))
    comps.sort(key=lambda t: (t[0], t[1]))
    return [blocks for _, _, blocks in comps]


def local_concentration(emap: ErrorMap, components: Sequence[frozenset]) -> float:
    """Largest component loss share of the total loss over all blocks."""
    total = emap.total
    if total < EPS_TOTAL or not components:
        return 0.0
    g = emap.grid
    best = max(sum(g[r, c] for r, c in comp) for comp in components)
    return float(min(best / total, 1.0))


def enhanced_concentration(c_local: float, h_norm: float, beta: float = 0.8) -> float:
    """Local concentration damped by normalised entropy: ``c_local * (1 - h_norm) ** beta``."""
    if not 0.0 <= c_local <= 1.0 or not 0.0 <= h_norm <= 1.0:
        raise InvalidInput("c_local and h_norm must lie in [0, 1]")
    return c_local * (1.0 - h_norm) ** beta


def spatial_metrics(emap: ErrorMap, beta: float = 0.8, connectivity: int = 8):
    """``(h, h_norm, c_local, c_enh, largest_component)`` for one error map."""
    h, h_norm = energy_entropy(emap)
    if emap.total < EPS_TOTAL:
        return h, h_norm, 0.0, 0.0, frozenset()
    comps = connected_components(active_mask(emap), connectivity, emap.grid)
    c_local = local_concentration(emap, comps)
    c_enh = enhanced_concentration(c_local, h_norm, beta)
    return h, h_norm, c_local, c_enh, (comps[0] if comps else frozenset())


def compute_metrics(emap: ErrorMap, th: GateThresholds | None = None, connectivity: int = 8) -> DetectionMetrics:
    th = th or GateThresholds()
    m = anomaly_magnitude(emap.losses, th.alpha)
    h, h_norm, c_local, c_enh, largest = spatial_metrics(emap, th.beta, connectivity)
    return DetectionMetrics(m, h, h_norm, c_local, c_enh, largest)


# -- decision ----------------------------------------------------------------

def attack_score(metrics: DetectionMetrics, th: GateThresholds) -> float:
    return max(metrics.m_anom / th.t_s, metrics.c_enh / th.t_cc1)


def classify(m_anom: float, c_enh: float, th: GateThresholds) -> VerdictClass:
    # Stage I (soft recall) then Stage II; all comparisons strict
    attacked = m_anom > th.t_s or (m_anom <= th.t_s and c_enh > th.t_cc1)
    if not attacked:
        return VerdictClass.CLEAN
    return VerdictClass.LOCAL if c_enh > th.t_cc2 else VerdictClass.GLOBAL


def dual_gate(metrics: DetectionMetrics, th: GateThresholds | None = None) -> Verdict:
    th = th or GateThresholds()
    cls = classify(metrics.m_anom, metrics.c_enh, th)
    return Verdict(cls, metrics, attack_score(metrics, th))


def detect(emap: ErrorMap, th: GateThresholds | None = None, connectivity: int = 8) -> Verdict:
    """Metrics plus gate for a single error map."""
    th = th or GateThresholds()
    return dual_gate(compute_metrics(emap, th, connectivity), th)
