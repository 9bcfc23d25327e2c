"""Shared image/text latent space: encoders, projector and vocabulary index.

The toy dual encoder stands in for a frozen CLIP-style expert. Both of its
towers map into a 256-dim feature (a 16x16 grayscale thumbnail, or a hashed
bag of words) and share one seeded Gaussian projection to ``dim`` latent
coordinates, so text and images land in the same space.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errormap import as_image, to_gray
from .errors import InvalidInput, ParseError

FEATURE_SIDE = 16
FEATURE_DIM = FEATURE_SIDE * FEATURE_SIDE
DEFAULT_DIM = 64
DEFAULT_VOCAB_SIZE = 1000

_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193
_WORD = re.compile(r"[\w']+|[^\w\s]")


def as_vector(v, *, nonzero: bool = False) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise InvalidInput(f"embedding must be a 1-D vector with d >= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("embedding has non-finite entries")
    if nonzero and not np.any(arr):
        raise InvalidInput("embedding must be non-zero")
    return arr


def cosine(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise InvalidInput(f"dimension mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InvalidInput("cosine is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def fnv1a(text: str) -> int:
    """32-bit FNV-1a hash of the UTF-8 bytes of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


def tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Exact area-resampling matrix (``n_out x n_in``), rows sum to one."""
    edges_out = np.linspace(0.0, n_in, n_out + 1)
    W = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = edges_out[i], edges_out[i + 1]
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            W[i, j] = min(hi, j + 1) - max(lo, j)
        W[i] /= W[i].sum()
    return W


def thumbnail(image: np.ndarray, side: int = FEATURE_SIDE) -> np.ndarray:
    """Grayscale ``side x side`` area-resampled copy of ``image``."""
    g = to_gray(image)
    return _area_weights(g.shape[0], side) @ g @ _area_weights(g.shape[1], side).T


class DualEncoder(Protocol):
    dim: int

    def encode_image(self, image) -> np.ndarray: ...

    def encode_text(self, text: str) -> np.ndarray: ...


class ToyDualEncoder:
    """Deterministic stand-in for a frozen image/text expert."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 2:
            raise InvalidInput("dim must be >= 2")
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((dim, FEATURE_DIM)) / np.sqrt(dim)
        self.projection.setflags(write=False)

    def image_features(self, image) -> np.ndarray:
        return thumbnail(as_image(image)).ravel()

    def text_features(self, text: str) -> np.ndarray:
        feats = np.zeros(FEATURE_DIM)
        for tok in tokenize(text):
            feats[fnv1a(tok) % FEATURE_DIM] += 1.0
        return feats

    def _embed(self, feats: np.ndarray, what: str) -> np.ndarray:
        z = self.projection @ feats
        norm = np.linalg.norm(z)
        if norm == 0:
            raise InvalidInput(f"{what} maps to the zero embedding")
        return z / norm

    def encode_image(self, image) -> np.ndarray:
        return self._embed(self.image_features(image), "image")

    def encode_text(self, text: str) -> np.ndarray:
        return self._embed(self.text_features(text), f"text {text!r}")


def semantic_verification(image, prompt: str, enc: DualEncoder) -> float:
    """Cosine between the expert's image and prompt embeddings."""
    return cosine(enc.encode_image(image), enc.encode_text(prompt))


# -- projector ---------------------------------------------------------------

@dataclass(frozen=True)
class Projector:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if W.ndim != 2 or b.ndim != 1 or b.shape[0] != W.shape[0]:
            raise InvalidInput(f"projector shapes W{W.shape}, b{b.shape} are inconsistent")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise InvalidInput("projector has non-finite entries")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @classmethod
    def identity(cls, dim: int = DEFAULT_DIM) -> "Projector":
        return cls(np.eye(dim), np.zeros(dim))

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    @classmethod
    def load(cls, path) -> "Projector":
        """Header ``d_out d_in``, then ``d_out`` rows of W, then one row of b."""
        try:
            lines = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
            d_out, d_in = (int(v) for v in lines[0])
            if len(lines) != d_out + 2:
                raise ParseError(f"expected {d_out + 2} non-empty lines, found {len(lines)}")
            W = np.array([[float(v) for v in row] for row in lines[1 : d_out + 1]])
            b = np.array([float(v) for v in lines[d_out + 1]])
        except (OSError, IndexError, ValueError) as exc:
            raise ParseError(f"malformed projector file {path}: {exc}") from exc
        if W.shape != (d_out, d_in) or b.shape != (d_out,):
            raise ParseError(f"projector file body does not match header {d_out}x{d_in}")
        try:
            return cls(W, b)
        except InvalidInput as exc:
            raise ParseError(str(exc)) from exc

    def save(self, path) -> None:
        lines = [f"{self.d_out} {self.d_in}"]
        lines += [" ".join(repr(float(v)) for v in row) for row in self.W]
        lines.append(" ".join(repr(float(v)) for v in self.b))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def project(e, p: Projector) -> np.ndarray:
    e = as_vector(e)
    if e.size != p.d_in:
        raise InvalidInput(f"projector expects d_in={p.d_in}, got {e.size}")
    return p.W @ e + p.b


# -- vocabulary --------------------------------------------------------------

class Vocabulary:
    """Token table with one non-zero embedding per unique token."""

    def __init__(self, tokens: Sequence[str], embeddings):
        tokens = list(tokens)
        E = np.asarray(embeddings, dtype=np.float64)
        if not tokens:
            raise InvalidInput("vocabulary must be non-empty")
        if E.ndim != 2 or E.shape[0] != len(tokens):
            raise InvalidInput(f"expected {len(tokens)} embeddings, got array of shape {E.shape}")
        if len(set(tokens)) != len(tokens):
            raise InvalidInput("vocabulary tokens must be unique")
        if not np.all(np.isfinite(E)):
            raise InvalidInput("vocabulary embeddings must be finite")
        norms = np.linalg.norm(E, axis=1)
        if np.any(norms == 0):
            raise InvalidInput("vocabulary embeddings must be non-zero")
        E.setflags(write=False)
        self.tokens = tokens
        self.embeddings = E
        self._unit = E / norms[:, None]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @classmethod
    def synthetic(cls, size: int = DEFAULT_VOCAB_SIZE, dim: int = DEFAULT_DIM, seed: int = 0) -> "Vocabulary":
        """Seeded random unit embeddings with tokens ``tok0000``, ``tok0001``, ..."""
        rng = np.random.default_rng(seed)
        E = rng.standard_normal((size, dim))
        E /= np.linalg.norm(E, axis=1, keepdims=True)
        width = max(4, len(str(size - 1)))
        return cls([f"tok{i:0{width}d}" for i in range(size)], E)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens, rows = [], []
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ParseError(f"cannot read vocabulary {path}: {exc}") from exc
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            token, sep, vec = line.partition("\t")
            if not sep:
                raise ParseError(f"line {lineno}: expected 'token<TAB>v1,v2,...'")
            try:
                rows.append([float(v) for v in vec.split(",")])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            tokens.append(token)
        if rows and len({len(r) for r in rows}) != 1:
            raise ParseError("vocabulary embeddings have inconsistent dimensions")
        try:
            return cls(tokens, np.array(rows))
        except InvalidInput as exc:
            raise ParseError(str(exc)) from exc

    def save(self, path) -> None:
        lines = [tok + "\t" + ",".join(repr(float(v)) for v in row) for tok, row in zip(self.tokens, self.embeddings)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def similarities(self, e) -> np.ndarray:
        e = as_vector(e, nonzero=True)
        if e.size != self.dim:
            raise InvalidInput(f"query has dimension {e.size}, vocabulary {self.dim}")
        return np.clip(self._unit @ (e / np.linalg.norm(e)), -1.0, 1.0)


def nn_search(e, vocab: Vocabulary, k: int = 1) -> list[tuple[str, float]]:
    """The ``k`` most cosine-similar tokens, best first; ties go to the lower index."""
    if not 1 <= k <= len(vocab):
        raise InvalidInput(f"k must lie in [1, {len(vocab)}], got {k}")
    sims = vocab.similarities(e)
    order = np.argsort(-sims, kind="stable")[:k]
    return [(vocab.tokens[i], float(sims[i])) for i in order]
