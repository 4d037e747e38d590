"""Core domain types shared by every other module.

The attribute registry fixes one canonical name order for the 13 tool
attributes. Every file format, vector, and report in this package indexes
attributes in exactly this order; nothing may permute it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

# Canonical registry: physical (0-5), functional (6-9), psychological (10-12).
ATTRIBUTE_NAMES: tuple[str, ...] = (
    "elongation",
    "spiky",
    "size",
    "smoothness",
    "texturedness",
    "hardness",
    "graspability",
    "hand_relatedness",
    "force_requirement",
    "body_extension",
    "threatness",
    "valence",
    "arousal",
)

NUM_ATTRIBUTES = len(ATTRIBUTE_NAMES)
RATING_MIN = 1.0
RATING_MAX = 7.0

_ATTRIBUTE_INDEX: dict[str, int] = {name: i for i, name in enumerate(ATTRIBUTE_NAMES)}

VALID_SPLITS = ("train", "test")


def canonical_attribute_order() -> list[str]:
    """Return the 13 attribute names in registry order (stable across runs)."""
    return list(ATTRIBUTE_NAMES)


def attribute_index(name: str) -> int:
    """Registry index of an attribute name; raises KeyError for unknown names."""
    try:
        return _ATTRIBUTE_INDEX[name]
    except KeyError:
        raise KeyError(
            f"unknown attribute {name!r}; expected one of {', '.join(ATTRIBUTE_NAMES)}"
        ) from None


def validate_attribute_vector(values, ground_truth: bool = False) -> np.ndarray:
    """Validate and coerce a 13-entry attribute vector to a float64 array.

    Ground-truth vectors must lie on the 1-7 rating scale; model predictions
    are only checked for length and finiteness (they may transiently exceed
    the scale before any clamping decision is made downstream).

    Raises ValueError naming the first violating index and the reason.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != NUM_ATTRIBUTES:
        raise ValueError(
            f"attribute vector must have length {NUM_ATTRIBUTES}, got shape {arr.shape}"
        )
    finite = np.isfinite(arr)
    if not finite.all():
        idx = int(np.argmin(finite))
        raise ValueError(f"attribute vector has non-finite value at index {idx}: {arr[idx]}")
    if ground_truth:
        in_range = (arr >= RATING_MIN) & (arr <= RATING_MAX)
        if not in_range.all():
            idx = int(np.argmin(in_range))
            raise ValueError(
                f"attribute vector value out of range at index {idx} "
                f"({ATTRIBUTE_NAMES[idx]}): {arr[idx]} not in "
                f"[{RATING_MIN:g}, {RATING_MAX:g}]"
            )
    return arr


@dataclass(frozen=True, eq=False)
class ToolRecord:
    """One tool category: numeric identity, display name, ground-truth attributes."""

    tool_id: int
    tool_name: str
    attributes: np.ndarray  # (13,) float64, values in [1, 7]

    def __post_init__(self):
        if self.tool_id < 0:
            raise ValueError(f"tool_id must be non-negative, got {self.tool_id}")
        object.__setattr__(
            self, "attributes", validate_attribute_vector(self.attributes, ground_truth=True)
        )


class ToolCatalog:
    """Ordered set of tool categories with their canonical attribute vectors."""

    def __init__(self, tools: Iterable[ToolRecord]):
        self.tools: list[ToolRecord] = list(tools)
        if not self.tools:
            raise ValueError("catalog must contain at least one tool")
        ids = [t.tool_id for t in self.tools]
        for prev, cur in zip(ids, ids[1:]):
            if cur <= prev:
                raise ValueError(
                    f"tool_ids must be strictly increasing, got {prev} before {cur}"
                )
        self._by_id: dict[int, ToolRecord] = {t.tool_id: t for t in self.tools}

    def __len__(self) -> int:
        return len(self.tools)

    def __iter__(self):
        return iter(self.tools)

    def __contains__(self, tool_id: int) -> bool:
        return tool_id in self._by_id

    def get(self, tool_id: int) -> ToolRecord:
        try:
            return self._by_id[tool_id]
        except KeyError:
            raise KeyError(f"tool_id {tool_id} not in catalog") from None

    def attributes_of(self, tool_id: int) -> np.ndarray:
        return self.get(tool_id).attributes

    def tool_ids(self) -> list[int]:
        return [t.tool_id for t in self.tools]

    def attribute_matrix(self) -> np.ndarray:
        """All catalog vectors stacked in tool order, shape (n_tools, 13)."""
        return np.stack([t.attributes for t in self.tools])


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """A precomputed feature vector standing in for a frozen backbone's output."""

    item_id: int
    tool_id: int
    split: str
    embedding: np.ndarray

    def __post_init__(self):
        if self.item_id < 0:
            raise ValueError(f"item_id must be non-negative, got {self.item_id}")
        if self.split not in VALID_SPLITS:
            raise ValueError(f"split must be one of {VALID_SPLITS}, got {self.split!r}")
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1 or emb.size == 0:
            raise ValueError(f"embedding must be a non-empty 1-D vector, got shape {emb.shape}")
        object.__setattr__(self, "embedding", emb)


class EmbeddingSet:
    """In-memory embedding provider: O(1) item lookup, split enumeration.

    Frozen-backbone semantics: the vector returned for an item never changes.
    All vectors share one dimension; computation is done in float64.
    """

    def __init__(self, records: Iterable[EmbeddingRecord]):
        records = list(records)
        if not records:
            raise ValueError("embedding set must contain at least one record")
        dim = records[0].embedding.shape[0]
        by_id: dict[int, EmbeddingRecord] = {}
        for rec in records:
            if rec.embedding.shape[0] != dim:
                raise ValueError(
                    f"item {rec.item_id}: embedding dimension {rec.embedding.shape[0]} "
                    f"differs from dataset dimension {dim}"
                )
            if rec.item_id in by_id:
                raise ValueError(f"duplicate item_id {rec.item_id}")
            by_id[rec.item_id] = rec
        self.dim = dim
        self._by_id = by_id
        self._splits: dict[str, list[int]] = {s: [] for s in VALID_SPLITS}
        for iid in sorted(by_id):
            self._splits[by_id[iid].split].append(iid)

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._by_id

    def record(self, item_id: int) -> EmbeddingRecord:
        try:
            return self._by_id[item_id]
        except KeyError:
            raise KeyError(f"item_id {item_id} not in embedding set") from None

    def vector(self, item_id: int) -> np.ndarray:
        return self.record(item_id).embedding

    def tool_of(self, item_id: int) -> int:
        return self.record(item_id).tool_id

    def items(self, split: str | None = None) -> list[int]:
        """Item ids in ascending order, optionally restricted to one split."""
        if split is None:
            return sorted(self._by_id)
        if split not in VALID_SPLITS:
            raise ValueError(f"split must be one of {VALID_SPLITS}, got {split!r}")
        return list(self._splits[split])

    def matrix(self, item_ids: Sequence[int]) -> np.ndarray:
        """Stack the given items' vectors into an (n, dim) float64 matrix."""
        return np.stack([self.vector(i) for i in item_ids]) if item_ids else np.zeros((0, self.dim))

    def check_tool_ids(self, catalog: ToolCatalog) -> None:
        """Reject records whose tool_id is missing from the companion catalog."""
        for iid in sorted(self._by_id):
            tid = self._by_id[iid].tool_id
            if tid not in catalog:
                raise ValueError(f"item {iid} references tool_id {tid} not in catalog")


@dataclass(frozen=True)
class ScenarioRecord:
    """A task scenario; the engine consumes its embedding, text is provenance."""

    scenario_id: int
    tool_id: int
    text: str
    item_id: int

    def __post_init__(self):
        if self.scenario_id < 0 or self.item_id < 0:
            raise ValueError("scenario_id and item_id must be non-negative")


CANDIDATES_PER_TRIAL = 10


@dataclass(frozen=True)
class MatchingTrial:
    """One scenario paired with 10 candidate items (1 target, 9 distractors)."""

    trial_id: int
    scenario_item_id: int
    candidate_item_ids: tuple[int, ...]
    target_position: int

    def __post_init__(self):
        object.__setattr__(self, "candidate_item_ids", tuple(self.candidate_item_ids))
        n = len(self.candidate_item_ids)
        if n != CANDIDATES_PER_TRIAL:
            raise ValueError(f"trial {self.trial_id}: expected {CANDIDATES_PER_TRIAL} candidates, got {n}")
        if len(set(self.candidate_item_ids)) != n:
            raise ValueError(f"trial {self.trial_id}: duplicate candidate item ids")
        if not 0 <= self.target_position < n:
            raise ValueError(
                f"trial {self.trial_id}: target_position {self.target_position} not in [0, {n - 1}]"
            )

    @property
    def target_item_id(self) -> int:
        return self.candidate_item_ids[self.target_position]


def check_trial(trial: MatchingTrial, scenario_tool: Mapping[int, int] | EmbeddingSet,
                candidate_tool: Mapping[int, int] | EmbeddingSet) -> None:
    """Cross-check a trial against the manifests that resolve its item ids.

    The candidate at target_position must share the scenario's tool; the nine
    distractors must not.
    """
    def _tool(src, item_id):
        if isinstance(src, EmbeddingSet):
            return src.tool_of(item_id)
        return src[item_id]

    want = _tool(scenario_tool, trial.scenario_item_id)
    got = _tool(candidate_tool, trial.target_item_id)
    if got != want:
        raise ValueError(
            f"trial {trial.trial_id}: target item {trial.target_item_id} has tool_id {got}, "
            f"scenario expects {want}"
        )
    for pos, iid in enumerate(trial.candidate_item_ids):
        if pos == trial.target_position:
            continue
        tid = _tool(candidate_tool, iid)
        if tid == want:
            raise ValueError(
                f"trial {trial.trial_id}: distractor item {iid} at position {pos} "
                f"duplicates the target tool_id {want}"
            )
