"""Core domain types for per-frame human-object interaction predictions.

All types here are immutable after construction and safe to share across
concurrent pipeline stages. Structural checks live in
``validate_prediction_set``; violations are returned as data, not raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

# (human_id, object_id); stable across frames when the upstream detector tracks
PairId = tuple[int, int]

CS = "cs"
SPATIAL = "spatial"
TEMPORAL = "temporal"
DEBATE = "debate"
SCORE_KINDS = (CS, SPATIAL, TEMPORAL, DEBATE)


class UnknownRelationError(KeyError):
    """Raised when a relation name is not in the vocabulary."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unknown relation: {self.name!r}"


@dataclass(frozen=True)
class RelationVocabulary:
    """Ordered list of relation-class labels; index <-> name is a bijection."""

    names: tuple[str, ...]

    def __post_init__(self):
        if not self.names:
            raise ValueError("vocabulary must be non-empty")
        if any(not n for n in self.names):
            raise ValueError("relation names must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise ValueError("relation names must be unique")

    @property
    def n(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownRelationError(name) from None


def lookup_relation(vocab: RelationVocabulary, name: str) -> int:
    """Index of ``name`` in the vocabulary; UnknownRelationError if absent."""
    return vocab.index_of(name)


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def as_int_list(self) -> list[int]:
        """Integer pixel serialization used in prompt text."""
        return [round(self.x1), round(self.y1), round(self.x2), round(self.y2)]


@dataclass(frozen=True)
class PairPrediction:
    """One human-object pair in one frame with its per-relation confidences."""

    frame_index: int
    object_class: str
    human_box: BoundingBox
    object_box: BoundingBox
    scores: tuple[float, ...]
    pair_id: Optional[PairId] = None


@dataclass(frozen=True)
class FramePrediction:
    frame_index: int
    frame_width: float
    frame_height: float
    pairs: tuple[PairPrediction, ...] = ()


@dataclass(frozen=True)
class VideoPredictionSet:
    video_id: str
    vocabulary: RelationVocabulary
    frames: tuple[FramePrediction, ...] = ()
    # fused-scale sets carry refined scores which may exceed 1
    score_scale: str = "base"

    def frame_indices(self) -> list[int]:
        return [f.frame_index for f in self.frames]

    def frame(self, frame_index: int) -> FramePrediction:
        for f in self.frames:
            if f.frame_index == frame_index:
                return f
        raise KeyError(frame_index)

    def iter_pairs(self) -> Iterator[tuple[FramePrediction, PairPrediction]]:
        for frame in self.frames:
            for pair in frame.pairs:
                yield frame, pair


def pair_key(pair: PairPrediction, position: int):
    """Total-order identity for a pair: pair_id when tracked, else its
    position within the frame."""
    if pair.pair_id is not None:
        return ("id",) + tuple(pair.pair_id)
    return ("idx", position)


@dataclass(frozen=True)
class GroundTruthSet:
    """Per frame, the set of (pair_id, relation_index) positive triplets."""

    frames: dict[int, frozenset[tuple[PairId, int]]]

    def for_frame(self, frame_index: int) -> frozenset[tuple[PairId, int]]:
        return self.frames.get(frame_index, frozenset())


class AgentScoreTable:
    """Sparse map (frame_index, pair_key, relation_index) -> per-kind scores.

    Built by merging partial tables from agent batches; keys are disjoint per
    batch so the merge is associative and commutative.
    """

    def __init__(self):
        self._entries: dict[tuple, dict[str, float]] = {}

    def set(self, frame_index: int, pkey, relation_index: int, kind: str, score: float):
        if kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {kind!r}")
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score {score} out of [0,1]")
        key = (frame_index, pkey, relation_index)
        self._entries.setdefault(key, {})[kind] = score

    def get(self, frame_index: int, pkey, relation_index: int, kind: str) -> Optional[float]:
        return self._entries.get((frame_index, pkey, relation_index), {}).get(kind)

    def kinds_at(self, frame_index: int, pkey, relation_index: int) -> dict[str, float]:
        return dict(self._entries.get((frame_index, pkey, relation_index), {}))

    def merge(self, other: "AgentScoreTable") -> "AgentScoreTable":
        for key, kinds in other._entries.items():
            self._entries.setdefault(key, {}).update(kinds)
        return self

    def items(self):
        return self._entries.items()

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class FusionWeights:
    """Weights of the score-integration formula plus the positive-prediction
    threshold used under the semi-constraint rule."""

    lambda_cs: float = 0.05
    lambda_s: float = 1.7
    lambda_t: float = 1.7
    lambda_debate: float = 0.2
    threshold: float = 0.3

    def __post_init__(self):
        for name in ("lambda_cs", "lambda_s", "lambda_t", "lambda_debate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0,1)")


def validate_prediction_set(pred_set: VideoPredictionSet) -> list[str]:
    """Structural validation. Returns a list of human-readable violations,
    each naming the frame, pair, and broken rule; empty iff well-formed."""
    violations: list[str] = []
    n = pred_set.vocabulary.n
    fused = pred_set.score_scale == "fused"

    last_index = None
    for frame in pred_set.frames:
        where = f"frame {frame.frame_index}"
        if last_index is not None and frame.frame_index <= last_index:
            violations.append(f"{where}: frame indices not strictly increasing")
        last_index = frame.frame_index
        if frame.frame_index < 0:
            violations.append(f"{where}: negative frame index")
        for i, pair in enumerate(frame.pairs):
            pwhere = f"{where} pair {pair.pair_id if pair.pair_id is not None else i}"
            if pair.frame_index != frame.frame_index:
                violations.append(f"{pwhere}: pair frame_index mismatch")
            if len(pair.scores) != n:
                violations.append(
                    f"{pwhere}: scores length {len(pair.scores)} != vocabulary size {n}"
                )
            for r, s in enumerate(pair.scores):
                if s < 0.0 or (not fused and s > 1.0):
                    violations.append(f"{pwhere} relation {r}: score out of [0,1]")
            for label, box in (("human", pair.human_box), ("object", pair.object_box)):
                if not (box.x1 < box.x2 and box.y1 < box.y2):
                    violations.append(f"{pwhere}: degenerate {label} box")
                if box.x1 < 0 or box.y1 < 0:
                    violations.append(f"{pwhere}: {label} box outside frame")
                if box.x2 > frame.frame_width or box.y2 > frame.frame_height:
                    violations.append(f"{pwhere}: {label} box outside frame")
    return violations
