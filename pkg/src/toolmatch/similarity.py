"""Similarity scoring, candidate ranking, and attribute masking for ablations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from toolmatch.domain import NUM_ATTRIBUTES, attribute_index

METRIC_NAMES = ("cosine", "negative_euclidean")


class SimilarityError(ValueError):
    """A similarity score could not be computed (zero norm, length mismatch)."""

    def __init__(self, message: str, item_id: int | None = None):
        super().__init__(message)
        self.item_id = item_id


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SimilarityError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise SimilarityError("cosine similarity undefined for zero-norm vector")
    return float(a @ b / (na * nb))


def negative_euclidean(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SimilarityError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(-np.linalg.norm(a - b))


METRICS = {"cosine": cosine_similarity, "negative_euclidean": negative_euclidean}


def resolve_metric(name: str):
    if name not in METRICS:
        raise ValueError(f"unknown metric {name!r}; expected one of {METRIC_NAMES}")
    return METRICS[name]


@dataclass(frozen=True)
class AblationMask:
    """Set of attribute indices deleted from all vectors before scoring."""

    removed: frozenset[int]

    def __init__(self, removed: Iterable[int] = ()):
        object.__setattr__(self, "removed", frozenset(int(i) for i in removed))
        for i in self.removed:
            if not 0 <= i < NUM_ATTRIBUTES:
                raise ValueError(f"attribute index {i} not in [0, {NUM_ATTRIBUTES - 1}]")
        if len(self.removed) >= NUM_ATTRIBUTES:
            raise ValueError("mask must leave at least one attribute dimension")

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "AblationMask":
        return cls(attribute_index(n) for n in names)

    @property
    def kept(self) -> np.ndarray:
        """Surviving indices in registry order."""
        return np.array([i for i in range(NUM_ATTRIBUTES) if i not in self.removed])

    def __bool__(self) -> bool:
        return bool(self.removed)


EMPTY_MASK = AblationMask()


def apply_mask(v: np.ndarray, mask: AblationMask | None) -> np.ndarray:
    """Drop the masked attribute dimensions, preserving survivor order."""
    v = np.asarray(v, dtype=np.float64)
    if mask is None or not mask.removed:
        return v
    if v.shape != (NUM_ATTRIBUTES,):
        raise ValueError(f"mask applies to 13-vectors, got shape {v.shape}")
    return v[mask.kept]


def rank_candidates(
    query: np.ndarray,
    candidates: Sequence[tuple[int, np.ndarray]],
    metric: str = "cosine",
    mask: AblationMask | None = None,
) -> list[tuple[int, float]]:
    """Score candidates against the query, best first, ties broken by ascending id.

    Scores are computed on masked vectors. A metric failure is re-raised with
    the offending candidate's id attached.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    score = resolve_metric(metric)
    mq = apply_mask(query, mask)
    scored: list[tuple[int, float]] = []
    for cid, vec in candidates:
        try:
            scored.append((cid, score(mq, apply_mask(vec, mask))))
        except SimilarityError as exc:
            raise SimilarityError(f"candidate {cid}: {exc}", item_id=cid) from None
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def select_tool(
    query: np.ndarray,
    candidates: Sequence[tuple[int, np.ndarray]],
    metric: str = "cosine",
    mask: AblationMask | None = None,
) -> tuple[int, float]:
    """The argmax of the similarity ranking: (candidate id, score)."""
    return rank_candidates(query, candidates, metric=metric, mask=mask)[0]
