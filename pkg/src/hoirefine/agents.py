"""Stage-1 cross-agent reasoning: run the common-sense, spatial and temporal
agents over keyframes for one provider, then spread keyframe scores to the
remaining frames.

Agents only score candidate relations whose base confidence reaches a small
floor; scoring every relation of every pair is exactly the call-volume
explosion keyframe sampling exists to avoid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

from .ingest import triplet_to_text
from .model import (
    CS,
    DEBATE,
    SPATIAL,
    TEMPORAL,
    AgentScoreTable,
    PairPrediction,
    RelationVocabulary,
    VideoPredictionSet,
    pair_key,
)
from .prompt import (
    parse_binary_output,
    parse_score_output,
    render_common_sense,
    render_spatial,
    render_temporal,
)
from .provider import AuthError, CompletionRequest, Provider, ProviderError, cached_complete

log = logging.getLogger(__name__)

DEFAULT_CANDIDATE_FLOOR = 0.05
DEFAULT_BATCH_SIZE = 16


class TrackingUnavailableError(RuntimeError):
    """No pair identifiers in the video; temporal reasoning and per-pair
    propagation cannot run."""


@dataclass(frozen=True)
class Transition:
    """A pair whose argmax relation changed between consecutive frames."""

    frame_index: int  # the later frame (t+1)
    pair_id: tuple[int, int]
    old_relation: int
    new_relation: int


def select_keyframes(frame_indices: list[int], interval: int) -> set[int]:
    """Frames at positions 0, interval, 2*interval, ... of the ordered list.
    The first frame is always included."""
    if interval < 1:
        raise ValueError("interval must be >= 1")
    return {frame_indices[pos] for pos in range(0, len(frame_indices), interval)}


def _argmax(scores) -> int:
    # ties break toward the lowest relation index
    best, best_score = 0, scores[0]
    for r, s in enumerate(scores):
        if s > best_score:
            best, best_score = r, s
    return best


def detect_transitions(pred_set: VideoPredictionSet) -> list[Transition]:
    """Argmax-relation changes for tracked pairs present in consecutive
    frames. Raises TrackingUnavailableError when no pair carries an id."""
    if not any(p.pair_id is not None for _, p in pred_set.iter_pairs()):
        raise TrackingUnavailableError("no pair identifiers in prediction set")
    transitions = []
    frames = pred_set.frames
    for prev, cur in zip(frames, frames[1:]):
        if cur.frame_index != prev.frame_index + 1:
            continue
        prev_by_id = {p.pair_id: p for p in prev.pairs if p.pair_id is not None}
        for pair in cur.pairs:
            if pair.pair_id is None or pair.pair_id not in prev_by_id:
                continue
            old = _argmax(prev_by_id[pair.pair_id].scores)
            new = _argmax(pair.scores)
            if old != new:
                transitions.append(
                    Transition(cur.frame_index, pair.pair_id, old, new)
                )
    return transitions


def _candidates(pair: PairPrediction, floor: float) -> list[int]:
    return [r for r, s in enumerate(pair.scores) if s >= floor]


def _batches(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def _call(provider: Provider, prompt: str, cache_dir: Optional[str]) -> str:
    req = CompletionRequest(provider_id=provider.id, prompt=prompt)
    if cache_dir:
        return cached_complete(provider, req, cache_dir).text
    return provider.complete(req).text


def run_common_sense(
    provider: Provider,
    pred_set: VideoPredictionSet,
    keyframes: set[int],
    vocab: RelationVocabulary,
    floor: float = DEFAULT_CANDIDATE_FLOOR,
    batch_size: int = DEFAULT_BATCH_SIZE,
    cache_dir: Optional[str] = None,
) -> AgentScoreTable:
    """Rationality scores for every candidate (keyframe, pair, relation).

    Scores are keyed by triplet text, so each distinct text costs one test
    slot regardless of how many keyframes it appears in. A failed batch
    leaves its entries absent; other batches are unaffected.
    """
    table = AgentScoreTable()
    # triplet text -> list of (frame, pair_key, relation) slots wanting it
    wanted: dict[str, list[tuple]] = {}
    for frame in pred_set.frames:
        if frame.frame_index not in keyframes:
            continue
        for i, pair in enumerate(frame.pairs):
            pk = pair_key(pair, i)
            for r in _candidates(pair, floor):
                text = triplet_to_text(pair, r, vocab)
                wanted.setdefault(text, []).append((frame.frame_index, pk, r))

    texts = sorted(wanted)
    scores: dict[str, float] = {}
    for batch in _batches(texts, batch_size):
        bundle = render_common_sense(batch)
        try:
            raw = _call(provider, bundle.render(), cache_dir)
        except AuthError:
            raise
        except ProviderError as exc:
            log.warning("%s: common-sense batch failed: %s", provider.id, exc)
            continue
        for text, value in zip(batch, parse_score_output(raw, len(batch))):
            if value is not None:
                scores[text] = value
    for text, value in scores.items():
        for frame_index, pk, r in wanted[text]:
            table.set(frame_index, pk, r, CS, value)
    return table


def classify_spatial_awareness(
    provider: Provider,
    relation_names: list[str],
    cache_dir: Optional[str] = None,
) -> dict[str, bool]:
    """Stage-1 spatial query: one yes/no per relation name, memoized by the
    response cache. A parse failure downgrades to not-spatial-aware."""
    aware: dict[str, bool] = {}
    for name in relation_names:
        bundle = render_spatial("awareness", [name])
        try:
            raw = _call(provider, bundle.render(), cache_dir)
        except AuthError:
            raise
        except ProviderError as exc:
            log.warning("%s: awareness query for %r failed: %s", provider.id, name, exc)
            aware[name] = False
            continue
        verdict = parse_binary_output(raw)
        if verdict is None:
            log.warning("%s: unparseable awareness answer for %r; treating as not spatial-aware",
                        provider.id, name)
            verdict = False
        aware[name] = verdict
    return aware


def run_spatial(
    provider: Provider,
    pred_set: VideoPredictionSet,
    keyframes: set[int],
    vocab: RelationVocabulary,
    floor: float = DEFAULT_CANDIDATE_FLOOR,
    batch_size: int = DEFAULT_BATCH_SIZE,
    cache_dir: Optional[str] = None,
) -> AgentScoreTable:
    """Two-stage spatial reasoning: classify each relation name once, then
    score only spatial-aware candidates with that frame's boxes."""
    table = AgentScoreTable()
    names_in_play = sorted(
        {vocab.names[r]
         for frame in pred_set.frames if frame.frame_index in keyframes
         for pair in frame.pairs
         for r in _candidates(pair, floor)}
    )
    if not names_in_play:
        return table
    aware = classify_spatial_awareness(provider, names_in_play, cache_dir)

    # (text, boxes) -> slots; identical geometry costs one test slot
    wanted: dict[tuple, list[tuple]] = {}
    for frame in pred_set.frames:
        if frame.frame_index not in keyframes:
            continue
        for i, pair in enumerate(frame.pairs):
            pk = pair_key(pair, i)
            for r in _candidates(pair, floor):
                if not aware.get(vocab.names[r], False):
                    continue
                text = triplet_to_text(pair, r, vocab)
                item = (
                    text,
                    tuple(pair.human_box.as_int_list()),
                    tuple(pair.object_box.as_int_list()),
                )
                wanted.setdefault(item, []).append((frame.frame_index, pk, r))

    items = sorted(wanted)
    for batch in _batches(items, batch_size):
        payload = [(t, list(hb), list(ob)) for t, hb, ob in batch]
        bundle = render_spatial("scoring", payload)
        try:
            raw = _call(provider, bundle.render(), cache_dir)
        except AuthError:
            raise
        except ProviderError as exc:
            log.warning("%s: spatial batch failed: %s", provider.id, exc)
            continue
        for item, value in zip(batch, parse_score_output(raw, len(batch))):
            if value is None:
                continue
            for frame_index, pk, r in wanted[item]:
                table.set(frame_index, pk, r, SPATIAL, value)
    return table


def run_temporal(
    provider: Provider,
    pred_set: VideoPredictionSet,
    transitions: list[Transition],
    vocab: RelationVocabulary,
    batch_size: int = DEFAULT_BATCH_SIZE,
    cache_dir: Optional[str] = None,
) -> AgentScoreTable:
    """Score each transition's change; the score attaches to the new relation
    at the later frame (the old relation is untouched)."""
    table = AgentScoreTable()
    if not transitions:
        return table
    pair_lookup = {}
    for frame in pred_set.frames:
        for pair in frame.pairs:
            if pair.pair_id is not None:
                pair_lookup[(frame.frame_index, pair.pair_id)] = pair

    items = []
    for tr in transitions:
        pair = pair_lookup[(tr.frame_index, tr.pair_id)]
        old_text = triplet_to_text(pair, tr.old_relation, vocab)
        new_text = triplet_to_text(pair, tr.new_relation, vocab)
        items.append((tr, old_text, new_text))

    for batch in _batches(items, batch_size):
        pairs_text = [(old, new) for _, old, new in batch]
        labels = [(tr.frame_index - 1, tr.frame_index) for tr, _, _ in batch]
        bundle = render_temporal(pairs_text, labels)
        try:
            raw = _call(provider, bundle.render(), cache_dir)
        except AuthError:
            raise
        except ProviderError as exc:
            log.warning("%s: temporal batch failed: %s", provider.id, exc)
            continue
        for (tr, _, _), value in zip(batch, parse_score_output(raw, len(batch))):
            if value is not None:
                table.set(tr.frame_index, ("id",) + tuple(tr.pair_id), tr.new_relation,
                          TEMPORAL, value)
    return table


def propagate_scores(
    table: AgentScoreTable,
    pred_set: VideoPredictionSet,
    keyframes: set[int],
    vocab: Optional[RelationVocabulary] = None,
) -> AgentScoreTable:
    """Copy keyframe scores to non-keyframes.

    For each score kind, a non-keyframe (pair, relation) slot takes the value
    from the nearest keyframe that has one; on a distance tie the earlier
    keyframe wins. Directly recorded non-keyframe values (temporal scores land
    wherever the transition happened) are kept. When a pair has no id, only
    common-sense scores propagate, matched by triplet text.
    """
    out = AgentScoreTable()
    for (frame_index, pk, r), kinds in table.items():
        for kind, value in kinds.items():
            out.set(frame_index, pk, r, kind, value)

    # keyframe sources: (pair_key, relation, kind) -> {keyframe: value}
    by_slot: dict[tuple, dict[int, float]] = {}
    # text-keyed common-sense sources for untracked pairs
    by_text: dict[str, dict[int, float]] = {}
    for (frame_index, pk, r), kinds in table.items():
        if frame_index not in keyframes:
            continue
        for kind, value in kinds.items():
            by_slot.setdefault((pk, r, kind), {})[frame_index] = value
    if vocab is not None:
        for frame in pred_set.frames:
            if frame.frame_index not in keyframes:
                continue
            for i, pair in enumerate(frame.pairs):
                pk = pair_key(pair, i)
                for r in range(vocab.n):
                    value = table.get(frame.frame_index, pk, r, CS)
                    if value is not None:
                        text = triplet_to_text(pair, r, vocab)
                        by_text.setdefault(text, {})[frame.frame_index] = value

    def nearest(sources: dict[int, float], frame_index: int) -> Optional[float]:
        best = None
        for kf, value in sources.items():
            d = abs(kf - frame_index)
            if best is None or d < best[0] or (d == best[0] and kf < best[1]):
                best = (d, kf, value)
        return best[2] if best else None

    for frame in pred_set.frames:
        if frame.frame_index in keyframes:
            continue
        for i, pair in enumerate(frame.pairs):
            pk = pair_key(pair, i)
            if pair.pair_id is not None:
                for (src_pk, r, kind), sources in by_slot.items():
                    if src_pk != pk:
                        continue
                    if out.get(frame.frame_index, pk, r, kind) is None:
                        value = nearest(sources, frame.frame_index)
                        if value is not None:
                            out.set(frame.frame_index, pk, r, kind, value)
            elif vocab is not None:
                for r in range(vocab.n):
                    if out.get(frame.frame_index, pk, r, CS) is not None:
                        continue
                    text = triplet_to_text(pair, r, vocab)
                    sources = by_text.get(text)
                    if sources:
                        value = nearest(sources, frame.frame_index)
                        if value is not None:
                            out.set(frame.frame_index, pk, r, CS, value)
    return out
