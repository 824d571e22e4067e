"""Contract dataset model, line-delimited JSON ingestion, and source cleanup.

Dataset files hold one JSON object per line with fields ``id`` (string),
``source`` (string) and optionally ``labels`` (array of 0/1 ints of taxonomy
length). The taxonomy file is a JSON array of label names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import EmptyContract, ParseError, SchemaError, UnknownLabel


@dataclass(frozen=True)
class LabelVector:
    """Binary vector over the configured vulnerability taxonomy."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise SchemaError(f"label bits must be 0 or 1, got {self.bits}")

    def __len__(self):
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def count(self) -> int:
        return sum(self.bits)

    def names(self, taxonomy: Sequence[str]) -> tuple[str, ...]:
        return tuple(name for name, bit in zip(taxonomy, self.bits) if bit)

    @classmethod
    def zeros(cls, length: int) -> "LabelVector":
        return cls(bits=(0,) * length)


def label_vector_from_names(names: Iterable[str], taxonomy: Sequence[str]) -> LabelVector:
    """Set bit i iff taxonomy[i] is in `names`; unknown names are an error."""
    wanted = set(names)
    unknown = wanted - set(taxonomy)
    if unknown:
        raise UnknownLabel(f"labels not in taxonomy: {sorted(unknown)}")
    return LabelVector(bits=tuple(1 if name in wanted else 0 for name in taxonomy))


@dataclass(frozen=True)
class Contract:
    """One preprocessed smart contract with optional ground-truth labels."""

    id: str
    source: str
    labels: Optional[LabelVector] = None


@dataclass(frozen=True)
class Dataset:
    contracts: tuple[Contract, ...]
    taxonomy: tuple[str, ...]
    # designation ("train"/"test") per contract id
    split: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.contracts)

    def __iter__(self):
        return iter(self.contracts)

    def ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.contracts)

    def get(self, contract_id: str) -> Contract:
        for c in self.contracts:
            if c.id == contract_id:
                return c
        raise KeyError(contract_id)

    def subset(self, designation: str) -> "Dataset":
        kept = tuple(c for c in self.contracts if self.split.get(c.id) == designation)
        return Dataset(
            contracts=kept,
            taxonomy=self.taxonomy,
            split={c.id: designation for c in kept},
        )


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def strip_comments(raw: str) -> str:
    """Drop // and /* */ comments; string literals pass through untouched."""
    out = []
    i, n = 0, len(raw)
    state = "code"  # code | line | block | string
    quote = ""
    while i < n:
        ch = raw[i]
        nxt = raw[i + 1] if i + 1 < n else ""
        if state == "code":
            if ch == "/" and nxt == "/":
                state = "line"
                i += 2
            elif ch == "/" and nxt == "*":
                state = "block"
                i += 2
            elif ch in ("'", '"'):
                state = "string"
                quote = ch
                out.append(ch)
                i += 1
            else:
                out.append(ch)
                i += 1
        elif state == "line":
            if ch == "\n":
                state = "code"
                out.append(ch)
            i += 1
        elif state == "block":
            if ch == "*" and nxt == "/":
                state = "code"
                i += 2
            else:
                # keep newlines so line structure survives block comments
                if ch == "\n":
                    out.append(ch)
                i += 1
        else:  # string
            if ch == "\\" and nxt:
                out.append(ch)
                out.append(nxt)
                i += 2
            elif ch == quote:
                state = "code"
                out.append(ch)
                i += 1
            elif ch == "\n":
                # unterminated literal; don't swallow the rest of the file
                state = "code"
                out.append(ch)
                i += 1
            else:
                out.append(ch)
                i += 1
    return "".join(out)


def preprocess(raw_source: str) -> str:
    """Normalize contract source: strip comments, per-line whitespace, blank lines.

    Raises EmptyContract when nothing but noise remains. Idempotent.
    """
    text = strip_comments(raw_source)
    lines = [line.strip() for line in text.split("\n")]
    lines = [line for line in lines if line]
    if not lines:
        raise EmptyContract("contract source is empty after preprocessing")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# ingestion / export
# ---------------------------------------------------------------------------

def load_taxonomy(path) -> tuple[str, ...]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
        raise SchemaError(f"taxonomy file {path} must be a JSON array of strings")
    if len(set(data)) != len(data):
        raise SchemaError("taxonomy contains duplicate label names")
    return tuple(data)


def ingest(path, taxonomy: Sequence[str], split: str = "train") -> Dataset:
    """Read a line-delimited JSON dataset; preprocess and validate each record."""
    taxonomy = tuple(taxonomy)
    contracts = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"record {index}: invalid JSON ({exc})", index) from exc
            if not isinstance(record, dict) or "id" not in record or "source" not in record:
                raise ParseError(f"record {index}: missing id/source field", index)
            cid = record["id"]
            if not isinstance(cid, str) or not isinstance(record["source"], str):
                raise ParseError(f"record {index}: id and source must be strings", index)
            if cid in seen:
                raise SchemaError(f"record {index}: duplicate contract id {cid!r}")
            seen.add(cid)
            labels = None
            if record.get("labels") is not None:
                bits = record["labels"]
                if len(bits) != len(taxonomy):
                    raise SchemaError(
                        f"record {index}: {len(bits)} labels for taxonomy of {len(taxonomy)}"
                    )
                labels = LabelVector(bits=tuple(int(b) for b in bits))
            try:
                source = preprocess(record["source"])
            except EmptyContract as exc:
                raise ParseError(f"record {index}: empty source after preprocessing", index) from exc
            contracts.append(Contract(id=cid, source=source, labels=labels))
    return Dataset(
        contracts=tuple(contracts),
        taxonomy=taxonomy,
        split={c.id: split for c in contracts},
    )


def export(dataset: Dataset, path) -> None:
    """Write a dataset back to line-delimited JSON (inverse of ingest)."""
    with open(path, "w", encoding="utf-8") as fh:
        for c in dataset.contracts:
            record = {"id": c.id, "source": c.source}
            if c.labels is not None:
                record["labels"] = list(c.labels.bits)
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def check_disjoint(train: Dataset, test: Dataset) -> None:
    overlap = set(train.ids()) & set(test.ids())
    if overlap:
        raise SchemaError(f"train/test splits share contract ids: {sorted(overlap)[:5]}")
