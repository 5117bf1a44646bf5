"""Text embedders, the learnable time encoding, and semantic input assembly.

Texts (raw node attributes, edge texts, LLM summaries) become d-dimensional
vectors through a TextEmbedder; each summary vector is concatenated with the
time encoding of its age, giving the 2d semantic inputs the co-encoder
consumes.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .summaries import SummaryChain, summaries_before


def text_hash(text: str) -> str:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=16).hexdigest()


class TextEmbedder:
    """Interface: embed(text) -> float32 vector of length dim, deterministic."""

    dim: int

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError


class HashEmbedder(TextEmbedder):
    """Seeded-hash projection of the token multiset, normalized to norm sqrt(d).

    Each token maps to a fixed gaussian vector seeded from its digest, the
    text embeds to the scaled sum. Norm sqrt(d) means unit RMS per dimension,
    which keeps the embedding half comparable to the time-encoding half when
    the two are concatenated downstream; a unit-norm convention buries the
    text signal an order of magnitude below the cosine features. Deterministic
    across processes (no builtin hash()), needs no model weights, and distinct
    texts land in distinct directions with overwhelming probability. Empty
    text gets the reserved axis-0 vector so attention scores never collapse.
    """

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._token_vecs: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_vecs.get(token)
        if vec is None:
            digest = hashlib.blake2b(f"{self.seed}:{token}".encode("utf-8"),
                                     digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim).astype(np.float32)
            self._token_vecs[token] = vec
        return vec

    def _reserved(self) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float32)
        out[0] = math.sqrt(self.dim)
        return out

    def embed(self, text: str) -> np.ndarray:
        tokens = re.findall(r"[a-z0-9]+", text.lower())
        if not tokens:
            return self._reserved()
        acc = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            acc += self._token_vector(tok)
        norm = np.linalg.norm(acc)
        if norm < 1e-12:
            return self._reserved()
        return (acc / norm * math.sqrt(self.dim)).astype(np.float32)


class FileEmbedder(TextEmbedder):
    """Adapter for precomputed vectors (e.g. real sentence-encoder outputs).

    File format: one record per line, text hash followed by d floats.
    """

    def __init__(self, path):
        self._vectors: dict[str, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float32)
                if dim is None:
                    dim = len(vec)
                elif len(vec) != dim:
                    raise ValueError(f"inconsistent dimensions in {path}")
                self._vectors[parts[0]] = vec
        if dim is None:
            raise ValueError(f"no vectors in {path}")
        self.dim = dim
        self.path = str(path)

    def embed(self, text: str) -> np.ndarray:
        key = text_hash(text)
        if key not in self._vectors:
            raise KeyError(
                f"no precomputed embedding for text hash {key} ({text[:40]!r}...)")
        return self._vectors[key]


def write_embedding_file(path, pairs) -> int:
    """Write (text, vector) pairs in the precomputed-embedding format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for text, vec in pairs:
            floats = " ".join(repr(float(x)) for x in np.asarray(vec))
            fh.write(f"{text_hash(text)} {floats}\n")
            n += 1
    return n


class EmbeddingCache(TextEmbedder):
    """Memoizes an embedder by text hash; summaries repeat across query times."""

    def __init__(self, embedder: TextEmbedder):
        self.inner = embedder
        self.dim = embedder.dim
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        key = text_hash(text)
        vec = self._cache.get(key)
        if vec is None:
            vec = self.inner.embed(text)
            self._cache[key] = vec
        return vec

    def embed_many(self, texts) -> np.ndarray:
        return np.stack([self.embed(t) for t in texts])


class TimeEncoder(nn.Module):
    """Learnable cosine time encoding: Phi(dt)_i = cos(omega_i * dt + phi_i).

    Frequencies start geometrically spaced in [1e-4, 1] so the encoding
    resolves both short and long time gaps; phases start at zero, making
    Phi(0) the all-ones vector.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        if dim == 1:
            omega0 = np.array([1.0])
        else:
            omega0 = np.geomspace(1e-4, 1.0, dim)
        self.omega = nn.Parameter(torch.tensor(omega0, dtype=torch.float32))
        self.phase = nn.Parameter(torch.zeros(dim))

    def forward(self, dt: torch.Tensor) -> torch.Tensor:
        if (dt < 0).any():
            raise ValueError("negative time delta violates causality")
        dt = dt.to(self.omega.dtype)
        return torch.cos(dt.unsqueeze(-1) * self.omega + self.phase)


@dataclass
class SemanticSequence:
    """Ordered semantic inputs x_u(t_k) = embedding cat time-encoding, t_k < t."""

    node: str
    t: float
    times: list[float]
    deltas: list[float]
    items: torch.Tensor  # (k, 2d)


def semantic_inputs(chain: SummaryChain, t: float, embedder: TextEmbedder,
                    enc: TimeEncoder) -> SemanticSequence:
    entries = summaries_before(chain, t)
    times = [tk for tk, _ in entries]
    deltas = [float(t) - tk for tk in times]
    embs = torch.tensor(
        np.stack([np.asarray(embedder.embed(text), dtype=np.float32)
                  for _, text in entries]),
        dtype=enc.omega.dtype)
    phi = enc(torch.tensor(deltas, dtype=enc.omega.dtype))
    return SemanticSequence(chain.node, float(t), times, deltas,
                            torch.cat([embs, phi], dim=-1))
