"""Semantic retrieval: sliding-window segmentation, hashed embeddings, cosine scan.

Fragment offsets count UTF-8 bytes of the preprocessed source so segment
boundaries are identical on every platform. The embedder hashes token
3-grams into signed buckets; it is deterministic and needs no model weights.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bm25 import RetrievalHit
from .corpus import Contract, Dataset, LabelVector
from .errors import EmptyFragment, EmptyStore, InvalidParameter, NoFragments, ZeroVector

DEFAULT_WINDOW = 1500
DEFAULT_OVERLAP = 300
DEFAULT_MIN_LEN = 100
DEFAULT_CHI = 5
DEFAULT_EMBED_DIM = 256

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class SegmentationParams:
    window: int = DEFAULT_WINDOW
    overlap: int = DEFAULT_OVERLAP
    min_len: int = DEFAULT_MIN_LEN
    chi: int = DEFAULT_CHI

    def __post_init__(self):
        if not 0 <= self.overlap < self.window:
            raise InvalidParameter(f"overlap must satisfy 0 <= o < window, got {self.overlap}")
        if self.min_len <= 0:
            raise InvalidParameter("min_len must be positive")
        if self.chi < 1:
            raise InvalidParameter("chi must be at least 1")


@dataclass(frozen=True)
class Fragment:
    parent_id: str
    frag_index: int
    text: str
    start: int
    end: int
    labels: Optional[LabelVector] = None


def segment(source: str, params: SegmentationParams = SegmentationParams(), *,
            parent_id: str = "", labels: Optional[LabelVector] = None) -> list[Fragment]:
    """Overlapping windows at stride window-overlap; short or contained tails drop."""
    data = source.encode("utf-8")
    length = len(data)
    stride = params.window - params.overlap
    fragments = []
    prev_end = -1
    start = 0
    index = 0
    while start < length:
        end = min(start + params.window, length)
        contained = end <= prev_end  # tail window already covered by the previous one
        if end - start >= params.min_len and not contained:
            fragments.append(Fragment(
                parent_id=parent_id,
                frag_index=index,
                text=data[start:end].decode("utf-8", errors="replace"),
                start=start,
                end=end,
                labels=labels,
            ))
            index += 1
        prev_end = max(prev_end, end)
        start += stride
    return fragments


def expected_fragment_count(source_len: int, params: SegmentationParams) -> int:
    """ceil((L - o)/(s - o)) for sources at least one window long."""
    stride = params.window - params.overlap
    return -(-(source_len - params.overlap) // stride)


class HashingEmbedder:
    """Signed feature hashing of token 3-grams, L2-normalized."""

    def __init__(self, dim: int = DEFAULT_EMBED_DIM):
        if dim < 1:
            raise InvalidParameter("embedding dimension must be positive")
        self.dim = dim

    def _grams(self, text: str) -> list[str]:
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            raise EmptyFragment("fragment has no tokenizable content")
        if len(tokens) < 3:
            return [" ".join(tokens)]
        return [" ".join(tokens[i:i + 3]) for i in range(len(tokens) - 2)]

    def bucket(self, gram: str) -> tuple[int, float]:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "big")
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        return h % self.dim, sign

    def embed(self, fragment_text: str) -> np.ndarray:
        if not fragment_text:
            raise EmptyFragment("cannot embed empty text")
        vec = np.zeros(self.dim)
        for gram in self._grams(fragment_text):
            idx, sign = self.bucket(gram)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # opposite-signed grams cancelled; fall back to unsigned counts
            for gram in self._grams(fragment_text):
                idx, _ = self.bucket(gram)
                vec[idx] += 1.0
            norm = np.linalg.norm(vec)
        return vec / norm


def cosine(q: np.ndarray, d: np.ndarray) -> float:
    qn = np.linalg.norm(q)
    dn = np.linalg.norm(d)
    if qn == 0.0 or dn == 0.0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.dot(q, d) / (qn * dn))


@dataclass
class StoreMeta:
    parent_id: str
    frag_index: int
    labels: LabelVector


class VectorStore:
    """Flat store of unit vectors scanned exhaustively with cosine similarity."""

    def __init__(self, vectors: np.ndarray, metadata: list[StoreMeta], dim: int):
        if vectors.shape[0] != len(metadata):
            raise InvalidParameter("metadata length must equal vector count")
        self.vectors = vectors
        self.metadata = metadata
        self.dim = dim

    def __len__(self):
        return self.vectors.shape[0]

    def save(self, path) -> None:
        meta = [
            {"parent_id": m.parent_id, "frag_index": m.frag_index, "labels": list(m.labels.bits)}
            for m in self.metadata
        ]
        np.savez(
            path,
            vectors=self.vectors,
            dim=np.int64(self.dim),
            metadata=np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8),
        )

    @classmethod
    def load(cls, path) -> "VectorStore":
        with np.load(path) as data:
            vectors = data["vectors"]
            dim = int(data["dim"])
            meta = json.loads(bytes(data["metadata"]).decode("utf-8"))
        metadata = [
            StoreMeta(m["parent_id"], m["frag_index"], LabelVector(bits=tuple(m["labels"])))
            for m in meta
        ]
        return cls(vectors, metadata, dim)


def build_store(train: Dataset, params: SegmentationParams = SegmentationParams(),
                embedder: Optional[HashingEmbedder] = None) -> VectorStore:
    """Segment and embed every training contract into one flat store."""
    embedder = embedder or HashingEmbedder()
    vectors, metadata = [], []
    for contract in train:
        labels = contract.labels if contract.labels is not None \
            else LabelVector.zeros(len(train.taxonomy))
        for frag in segment(contract.source, params, parent_id=contract.id, labels=labels):
            vectors.append(embedder.embed(frag.text))
            metadata.append(StoreMeta(contract.id, frag.frag_index, labels))
    if not vectors:
        raise EmptyStore("dataset produced zero fragments")
    return VectorStore(np.stack(vectors), metadata, embedder.dim)


def dense_retrieve(query: Contract, store: VectorStore,
                   params: SegmentationParams = SegmentationParams(),
                   embedder: Optional[HashingEmbedder] = None) -> list[RetrievalHit]:
    """Per query fragment, the chi best foreign vectors by cosine similarity."""
    embedder = embedder or HashingEmbedder(store.dim)
    fragments = segment(query.source, params)
    if not fragments:
        raise NoFragments(f"query {query.id!r} yields no fragments")
    candidates = [i for i, m in enumerate(store.metadata) if m.parent_id != query.id]
    hits = []
    for frag in fragments:
        q = embedder.embed(frag.text)
        scores = store.vectors @ q
        ranked = sorted(
            candidates,
            key=lambda i: (-scores[i], store.metadata[i].parent_id, store.metadata[i].frag_index),
        )
        for i in ranked[:params.chi]:
            meta = store.metadata[i]
            hits.append(RetrievalHit(
                contract_id=meta.parent_id,
                score=float(scores[i]),
                labels=meta.labels,
            ))
    return hits


def dynamic_threshold(n_retrieved: int) -> float:
    """The greater of 40% of the retrieved fragment count and 1."""
    return max(n_retrieved * 0.4, 1.0)


def dense_vote(hits: Sequence[RetrievalHit], num_labels: Optional[int] = None) -> LabelVector:
    """One vote per hit per carried label; keep labels with votes >= threshold."""
    if num_labels is None:
        if not hits:
            raise InvalidParameter("num_labels required when the hit list is empty")
        num_labels = len(hits[0].labels)
    tau = dynamic_threshold(len(hits))
    counts = [0] * num_labels
    for hit in hits:
        for j, bit in enumerate(hit.labels.bits):
            counts[j] += bit
    return LabelVector(bits=tuple(1 if c >= tau else 0 for c in counts))
