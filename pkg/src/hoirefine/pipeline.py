"""End-to-end refinement: keyframe selection, per-provider agent runs,
debate, cross-provider aggregation, propagation and fusion.

Stage-1 scores used by fusion are arithmetic means over the providers that
returned a value, which is order-independent and robust to one provider
failing. The debate judge's score is shared, not per-provider.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .agents import (
    Transition,
    detect_transitions,
    propagate_scores,
    run_common_sense,
    run_spatial,
    run_temporal,
    select_keyframes,
    TrackingUnavailableError,
)
from .config import RefinementConfig
from .debate import (
    persist_transcript,
    render_debate_question,
    run_debate,
    select_debate_candidates,
)
from .fusion import fuse_scores
from .ingest import triplet_to_text
from .model import (
    CS,
    DEBATE,
    SPATIAL,
    TEMPORAL,
    AgentScoreTable,
    FusionWeights,
    VideoPredictionSet,
    pair_key,
)
from .provider import Provider

log = logging.getLogger(__name__)

ALL_COMPONENTS = {"cs": True, "spatial": True, "temporal": True, "debate": True}
_KIND_BY_COMPONENT = {"cs": CS, "spatial": SPATIAL, "temporal": TEMPORAL, "debate": DEBATE}


@dataclass
class RunStats:
    provider_calls: dict[str, int] = field(default_factory=dict)
    cache_hits: dict[str, int] = field(default_factory=dict)
    debates: int = 0
    coverage: dict[str, float] = field(default_factory=dict)

    def summary(self) -> str:
        lines = ["run summary:"]
        total_calls = sum(self.provider_calls.values())
        total_hits = sum(self.cache_hits.values())
        for pid in sorted(self.provider_calls):
            lines.append(
                f"  provider {pid}: {self.provider_calls[pid]} calls, "
                f"{self.cache_hits.get(pid, 0)} cache hits"
            )
        seen = total_calls + total_hits
        rate = (total_hits / seen) if seen else 0.0
        lines.append(f"  total: {total_calls} calls, cache hit rate {rate:.1%}")
        lines.append(f"  debates run: {self.debates}")
        for kind in sorted(self.coverage):
            lines.append(f"  {kind} coverage: {self.coverage[kind]:.1%} of candidates")
        return "\n".join(lines)


@dataclass
class RefinementOutcome:
    fused: dict  # (frame_index, pair_key, relation_index) -> fused score
    table: AgentScoreTable  # propagated, aggregated agent scores
    keyframes: set[int]
    stats: RunStats


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def aggregate_provider_tables(tables: dict[str, AgentScoreTable]) -> AgentScoreTable:
    """Per-slot arithmetic mean of cs/spatial/temporal over the providers
    that scored the slot."""
    merged: dict[tuple, dict[str, list[float]]] = {}
    for table in tables.values():
        for key, kinds in table.items():
            slot = merged.setdefault(key, {})
            for kind, value in kinds.items():
                slot.setdefault(kind, []).append(value)
    out = AgentScoreTable()
    for (frame_index, pk, r), kinds in merged.items():
        for kind, values in kinds.items():
            out.set(frame_index, pk, r, kind, _mean(values))
    return out


def _keyframe_candidate_slots(pred_set: VideoPredictionSet, keyframes: set[int],
                              floor: float):
    for frame in pred_set.frames:
        if frame.frame_index not in keyframes:
            continue
        for i, pair in enumerate(frame.pairs):
            pk = pair_key(pair, i)
            for r, s in enumerate(pair.scores):
                if s >= floor:
                    yield frame.frame_index, pk, r, pair


def run_stage_one(
    pred_set: VideoPredictionSet,
    config: RefinementConfig,
    providers: list[Provider],
    keyframes: set[int],
    cache_dir: Optional[str],
    toggles: dict,
) -> dict[str, AgentScoreTable]:
    """Raw per-provider keyframe score tables for the enabled agents."""
    vocab = pred_set.vocabulary
    transitions: list[Transition] = []
    if toggles.get("temporal", True):
        try:
            transitions = [
                tr for tr in detect_transitions(pred_set)
                # keyframe-adjacent changes only; others are covered by propagation
                if tr.frame_index in keyframes or tr.frame_index - 1 in keyframes
            ]
        except TrackingUnavailableError:
            log.info("no pair tracking; temporal agent disabled")

    tables: dict[str, AgentScoreTable] = {}
    for provider in providers:
        table = AgentScoreTable()
        if toggles.get("cs", True):
            table.merge(run_common_sense(
                provider, pred_set, keyframes, vocab,
                floor=config.candidate_floor, batch_size=config.batch_size,
                cache_dir=cache_dir))
        if toggles.get("spatial", True):
            table.merge(run_spatial(
                provider, pred_set, keyframes, vocab,
                floor=config.candidate_floor, batch_size=config.batch_size,
                cache_dir=cache_dir))
        if toggles.get("temporal", True) and transitions:
            table.merge(run_temporal(
                provider, pred_set, transitions, vocab,
                batch_size=config.batch_size, cache_dir=cache_dir))
        tables[provider.id] = table
    return tables


def run_stage_two(
    pred_set: VideoPredictionSet,
    config: RefinementConfig,
    providers: list[Provider],
    judge: Provider,
    per_provider: dict[str, AgentScoreTable],
    keyframes: set[int],
    cache_dir: Optional[str],
    transcript_dir: Optional[str],
    max_workers: int = 8,
) -> AgentScoreTable:
    """Debate the selected keyframe candidates and record judge scores."""
    vocab = pred_set.vocabulary
    per_provider_fused: dict[tuple, list[float]] = {}
    slot_pairs = {}
    for frame_index, pk, r, pair in _keyframe_candidate_slots(
            pred_set, keyframes, config.candidate_floor):
        scores = []
        for provider in providers:
            table = per_provider[provider.id]
            scores.append(fuse_scores(
                pair.scores[r],
                s_cs=table.get(frame_index, pk, r, CS),
                s_spatial=table.get(frame_index, pk, r, SPATIAL),
                s_temporal=table.get(frame_index, pk, r, TEMPORAL),
                weights=config.weights,
            ))
        per_provider_fused[(frame_index, pk, r)] = scores
        slot_pairs[(frame_index, pk, r)] = pair

    candidates = select_debate_candidates(
        per_provider_fused, config.debate_mode, config.disagreement_delta)
    if not candidates:
        return AgentScoreTable()

    def debate_slot(slot):
        frame_index, pk, r = slot
        pair = slot_pairs[slot]
        question = render_debate_question(
            triplet_to_text(pair, r, vocab),
            pair.human_box.as_int_list(),
            pair.object_box.as_int_list(),
            {providers[i].id: per_provider_fused[slot][i] for i in range(len(providers))},
        )
        transcript = run_debate(question, providers, judge, cache_dir=cache_dir)
        if transcript_dir:
            persist_transcript(transcript, transcript_dir)
        return slot, transcript.judge_score

    table = AgentScoreTable()
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for slot, score in pool.map(debate_slot, candidates):
            if score is not None:
                frame_index, pk, r = slot
                table.set(frame_index, pk, r, DEBATE, score)
    return table


def fuse_table(
    pred_set: VideoPredictionSet,
    table: AgentScoreTable,
    weights: FusionWeights,
    toggles: Optional[dict] = None,
) -> dict:
    """Fused score for every (frame, pair, relation); disabled components'
    terms are dropped entirely."""
    toggles = dict(ALL_COMPONENTS) if toggles is None else toggles
    fused = {}
    for frame in pred_set.frames:
        for i, pair in enumerate(frame.pairs):
            pk = pair_key(pair, i)
            for r, base in enumerate(pair.scores):
                kinds = table.kinds_at(frame.frame_index, pk, r)
                fused[(frame.frame_index, pk, r)] = fuse_scores(
                    base,
                    s_cs=kinds.get(CS) if toggles.get("cs") else None,
                    s_spatial=kinds.get(SPATIAL) if toggles.get("spatial") else None,
                    s_temporal=kinds.get(TEMPORAL) if toggles.get("temporal") else None,
                    s_debate=kinds.get(DEBATE) if toggles.get("debate") else None,
                    weights=weights,
                )
    return fused


def _coverage(pred_set, table, keyframes, floor) -> dict[str, float]:
    slots = list(_keyframe_candidate_slots(pred_set, keyframes, floor))
    if not slots:
        return {}
    coverage = {}
    for kind in (CS, SPATIAL, TEMPORAL, DEBATE):
        scored = sum(
            1 for frame_index, pk, r, _ in slots
            if table.get(frame_index, pk, r, kind) is not None
        )
        coverage[kind] = scored / len(slots)
    return coverage


def refine(
    pred_set: VideoPredictionSet,
    config: RefinementConfig,
    cache_dir: Optional[str] = None,
    transcript_dir: Optional[str] = None,
    toggles: Optional[dict] = None,
    providers: Optional[list[Provider]] = None,
) -> RefinementOutcome:
    """Full pipeline over one prediction set. ``toggles`` switches individual
    components off (for ablations); reusing ``providers`` across calls keeps
    their call counters cumulative."""
    toggles = dict(ALL_COMPONENTS) if toggles is None else dict(toggles)
    if providers is None:
        providers = [Provider(spec) for spec in config.providers]
    judge = next(p for p in providers if p.id == config.judge_provider)

    keyframes = select_keyframes(pred_set.frame_indices(), config.keyframe_interval) \
        if pred_set.frames else set()

    per_provider = run_stage_one(pred_set, config, providers, keyframes,
                                 cache_dir, toggles)
    table = aggregate_provider_tables(per_provider)

    debates = 0
    if toggles.get("debate", True) and config.debate_mode != "off":
        debate_table = run_stage_two(
            pred_set, config, providers, judge, per_provider, keyframes,
            cache_dir, transcript_dir)
        debates = len(debate_table)
        table.merge(debate_table)

    table = propagate_scores(table, pred_set, keyframes, pred_set.vocabulary)
    fused = fuse_table(pred_set, table, config.weights, toggles)

    stats = RunStats(
        provider_calls={p.id: p.call_count for p in providers},
        cache_hits={p.id: p.cache_hits for p in providers},
        debates=debates,
        coverage=_coverage(pred_set, table, keyframes, config.candidate_floor),
    )
    return RefinementOutcome(fused=fused, table=table, keyframes=keyframes, stats=stats)
