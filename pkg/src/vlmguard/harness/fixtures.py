"""Procedural clean scenes and synthetic global/patch attacks.

All generated images are quantised to 8-bit levels so that writing them
to PNG and reading them back is lossless.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errormap import as_image, save_image
from ..errors import InvalidInput
from ..sentinel import VerdictClass

IMAGE_SIZE = 224
SENSOR_NOISE = 1.0 / 255
EPSILONS = (4 / 255, 8 / 255, 16 / 255)
# block-aligned patch sizes covering 2-5% of a 224x224 frame
PATCH_SIZES = ((32, 32), (32, 48), (48, 32), (48, 48))
PATCH_ALIGN = 16
CHECKER_PERIOD = 4


class AttackKind(str, enum.Enum):
    GLOBAL_UNIFORM = "GlobalUniform"
    GLOBAL_GAUSSIAN = "GlobalGaussian"
    GLOBAL_SIGN_GRAD = "GlobalSignGrad"
    PATCH = "Patch"

    @property
    def is_global(self) -> bool:
        return self is not AttackKind.PATCH


class PatchFill(str, enum.Enum):
    CHECKER = "checker"
    SATURATED_RANDOM = "saturated-random"


@dataclass(frozen=True)
class PatchSpec:
    height: int
    width: int
    top: int
    left: int
    fill: PatchFill = PatchFill.SATURATED_RANDOM


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    epsilon: float = 0.0
    patch: PatchSpec | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind.is_global:
            if not 0.0 < self.epsilon <= 1.0:
                raise InvalidInput(f"global attacks need 0 < epsilon <= 1, got {self.epsilon}")
        elif self.patch is None:
            raise InvalidInput("a patch attack needs a PatchSpec")


def quantize(image: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


# -- clean scenes ------------------------------------------------------------

def clean_scene(seed: int, size: int = IMAGE_SIZE) -> np.ndarray:
    """Smooth colour gradient with a few soft-edged shapes and sensor noise."""
    rng = np.random.default_rng([seed, 0xC1EA])
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.empty((size, size, 3))
    for ch in range(3):
        a, b, c = rng.uniform(0.35, 0.65), rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)
        fx, fy, ph = rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5), rng.uniform(0, 2 * np.pi)
        img[:, :, ch] = a + b * xx + c * yy + 0.05 * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)

    shapes = np.zeros((size, size, 3))
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        r = rng.uniform(0.06, 0.18)
        if rng.random() < 0.5:
            region = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
        else:
            region = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.6, 1.4))
        shapes += region[:, :, None] * rng.uniform(-0.15, 0.15, size=3)
    shapes = ndimage.gaussian_filter(shapes, sigma=(6, 6, 0))

    noise = SENSOR_NOISE * rng.standard_normal((size, size, 3))
    return quantize(np.clip(img + shapes, 0.1, 0.9) + noise)


# -- attacks -----------------------------------------------------------------

def _highpass(image: np.ndarray) -> np.ndarray:
    return image - ndimage.gaussian_filter(image, sigma=(1.0, 1.0, 0))


def gen_global(image, spec: AttackSpec) -> np.ndarray:
    """``clamp(image + delta)`` with ``|delta|_inf <= epsilon``."""
    if not spec.kind.is_global:
        raise InvalidInput(f"{spec.kind.value} is not a global attack")
    image = as_image(image)
    eps = spec.epsilon
    rng = np.random.default_rng([spec.seed, 0x610B])
    if spec.kind is AttackKind.GLOBAL_UNIFORM:
        delta = rng.uniform(-eps, eps, size=image.shape)
    elif spec.kind is AttackKind.GLOBAL_GAUSSIAN:
        delta = np.clip(rng.normal(0.0, eps / 2, size=image.shape), -eps, eps)
    else:
        # gradient-free stand-in for an FGSM step
        delta = eps * np.sign(_highpass(image))
    return np.clip(image + delta, 0.0, 1.0)


def patch_content(spec: PatchSpec, channels: int, seed: int) -> np.ndarray:
    h, w = spec.height, spec.width
    if spec.fill is PatchFill.CHECKER:
        half = CHECKER_PERIOD // 2
        yy, xx = np.mgrid[0:h, 0:w]
        board = ((yy // half + xx // half) % 2).astype(np.float64)
        return np.repeat(board[:, :, None], channels, axis=2)
    rng = np.random.default_rng([seed, 0x9A7C])
    return rng.integers(0, 2, size=(h, w, channels)).astype(np.float64)


def gen_patch(image, spec: AttackSpec) -> tuple[np.ndarray, np.ndarray]:
    """Overlay a patch; returns the attacked image and its exact pixel mask."""
    if spec.kind is not AttackKind.PATCH:
        raise InvalidInput(f"{spec.kind.value} is not a patch attack")
    image = as_image(image)
    H, W, C = image.shape
    p = spec.patch
    if p.height < 1 or p.width < 1 or p.top < 0 or p.left < 0 or p.top + p.height > H or p.left + p.width > W:
        raise InvalidInput(f"patch {p} does not fit inside a {H}x{W} image")
    mask = np.zeros((H, W), dtype=bool)
    mask[p.top : p.top + p.height, p.left : p.left + p.width] = True
    out = image.copy()
    out[mask] = patch_content(p, C, spec.seed).reshape(-1, C)
    return out, mask


# -- suites ------------------------------------------------------------------

@dataclass
class Fixture:
    id: str
    image: np.ndarray
    truth: VerdictClass
    spec: AttackSpec | None = None
    mask: np.ndarray | None = None


def random_patch_spec(rng: np.random.Generator, size: int = IMAGE_SIZE) -> PatchSpec:
    h, w = PATCH_SIZES[rng.integers(len(PATCH_SIZES))]
    top = int(rng.integers(0, (size - h) // PATCH_ALIGN + 1)) * PATCH_ALIGN
    left = int(rng.integers(0, (size - w) // PATCH_ALIGN + 1)) * PATCH_ALIGN
    fill = PatchFill.CHECKER if rng.random() < 0.5 else PatchFill.SATURATED_RANDOM
    return PatchSpec(h, w, top, left, fill)


def make_suite(n_clean: int = 70, n_global: int = 65, n_patch: int = 65, seed: int = 0,
               size: int = IMAGE_SIZE) -> list[Fixture]:
    """Deterministic mixed suite of clean, globally perturbed and patched scenes."""
    rng = np.random.default_rng([seed, 0x5E7])
    out = []
    base_seed = int(rng.integers(2**31))
    for i in range(n_clean):
        out.append(Fixture(f"clean_{seed}_{i:03d}", clean_scene(base_seed + i, size), VerdictClass.CLEAN))
    kinds = (AttackKind.GLOBAL_UNIFORM, AttackKind.GLOBAL_GAUSSIAN, AttackKind.GLOBAL_SIGN_GRAD)
    for i in range(n_global):
        spec = AttackSpec(kinds[i % 3], EPSILONS[(i // 3) % 3], seed=base_seed + 10_000 + i)
        scene = clean_scene(base_seed + 10_000 + i, size)
        out.append(Fixture(f"global_{seed}_{i:03d}", quantize(gen_global(scene, spec)), VerdictClass.GLOBAL, spec))
    for i in range(n_patch):
        spec = AttackSpec(AttackKind.PATCH, patch=random_patch_spec(rng, size), seed=base_seed + 20_000 + i)
        scene = clean_scene(base_seed + 20_000 + i, size)
        img, mask = gen_patch(scene, spec)
        out.append(Fixture(f"patch_{seed}_{i:03d}", img, VerdictClass.LOCAL, spec, mask))
    return out


def write_suite(fixtures: list[Fixture], directory) -> Path:
    """Save fixtures as PNGs plus a ``manifest.tsv``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for fx in fixtures:
        name = f"{fx.id}.png"
        save_image(fx.image, directory / name)
        lines.append(f"{fx.id}\t{name}\t{fx.truth.value}")
    manifest = directory / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


# -- prompt-tuning fixtures --------------------------------------------------

DRIVING_PROMPTS = (
    "describe the driving scene and the safe action",
    "what color is the traffic light ahead",
    "is there a pedestrian crossing the road",
    "what does the road sign say",
    "should the vehicle slow down or keep its speed",
    "what is the weather and time of day",
    "list the objects in front of the car",
    "is it safe to change to the left lane",
)


@dataclass
class EaptFixture:
    id: str
    image: np.ndarray
    prompt: str
    seed: int


def make_eapt_fixtures(n: int = 20, seed: int = 0, size: int = 64) -> list[EaptFixture]:
    """Globally perturbed scenes paired with driving prompts."""
    out = []
    for i in range(n):
        s = seed * 1000 + i
        kind = (AttackKind.GLOBAL_UNIFORM, AttackKind.GLOBAL_GAUSSIAN, AttackKind.GLOBAL_SIGN_GRAD)[i % 3]
        spec = AttackSpec(kind, EPSILONS[i % len(EPSILONS)], seed=s)
        img = quantize(gen_global(clean_scene(s, size), spec))
        out.append(EaptFixture(f"eapt_{seed}_{i:02d}", img, DRIVING_PROMPTS[i % len(DRIVING_PROMPTS)], s))
    return out
