"""Filters that clean a translated corpus before NLU training.

Two independent mechanisms:

* `roundtrip_filter` keeps an utterance only when translating it forward,
  translating the result back, and re-running source-language NLU lands on
  the same interpretation it started with.  Stricter modes also compare
  slots or require a minimum intent confidence on the back-translation.

* `score_filter` keeps an utterance only when its length-normalized
  translation score clears a per-domain threshold of mean + k * stdev.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import SlotSpan, Utterance
from .errors import ConfigError
from .nlu import CrfModel, MaxEntModel, intent_posteriors, tag_slots
from .translate import (
    OVERLAP,
    UNALIGNED_SLOT,
    ProjectionRejected,
    TranslationResult,
    Translator,
    project_annotations,
)

MODE_INTENT = "INTENT"
MODE_INTENT_SLOTS = "INTENT_SLOTS"
MODE_INTENT_CONFIDENCE = "INTENT_CONFIDENCE"
MODES = (MODE_INTENT, MODE_INTENT_SLOTS, MODE_INTENT_CONFIDENCE)

SLOTS_TYPES_ONLY = "TYPES_ONLY"
SLOTS_TYPES_AND_VALUES = "TYPES_AND_VALUES"
SLOT_COMPARISONS = (SLOTS_TYPES_ONLY, SLOTS_TYPES_AND_VALUES)

# Removal reasons recorded in FilterOutcome.removed.
NO_TRANSLATION = "NO_TRANSLATION"
INTENT_MISMATCH = "INTENT_MISMATCH"
SLOT_MISMATCH = "SLOT_MISMATCH"
LOW_CONFIDENCE = "LOW_CONFIDENCE"
BELOW_THRESHOLD = "BELOW_THRESHOLD"


@dataclass(frozen=True)
class FilterConfig:
    """Knobs for both filters.

    `score_multiplier` is the signed k in mean + k * stdev; None disables
    score filtering (keep everything).  `use_gold_labels` compares the
    back-translation's NLU output against the corpus annotations instead of
    the NLU output on the source utterance.
    """

    mode: str = MODE_INTENT
    confidence_threshold: float = 0.1
    score_multiplier: float | None = None
    slot_comparison: str = SLOTS_TYPES_ONLY
    use_gold_labels: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("unknown filter mode %r" % self.mode)
        if self.slot_comparison not in SLOT_COMPARISONS:
            raise ConfigError("unknown slot comparison %r" % self.slot_comparison)
        if not (0.0 <= self.confidence_threshold <= 1.0):
            raise ConfigError("confidence threshold must be in [0, 1]")


@dataclass
class FilterOutcome:
    """Partition of the input: kept utterances plus (id, reason) removals."""

    kept: list[Utterance]
    removed: list[tuple[str, str]]

    @property
    def stats(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for _, reason in self.removed:
            counts[reason] = counts.get(reason, 0) + 1
        return counts


def _slot_key(slots: Iterable[SlotSpan], comparison: str) -> dict:
    counts: dict = {}
    for s in slots:
        key = s.slot_type if comparison == SLOTS_TYPES_ONLY else (
            s.slot_type, s.value.lower()
        )
        counts[key] = counts.get(key, 0) + 1
    return counts


def roundtrip_filter(
    source_corpus: Sequence[Utterance],
    forward: Translator,
    backward: Translator,
    source_nlu: tuple[CrfModel, MaxEntModel],
    config: FilterConfig,
    target_language: str = "",
) -> FilterOutcome:
    """Keep utterances whose interpretation survives a translation round trip.

    Per utterance: run source-language NLU on it, translate it forward,
    project its annotations onto the translation, translate the result back,
    run the same NLU on the back-translation, and keep the projected target
    utterance only when the two NLU readings agree (see FilterConfig for the
    agreement criterion).  A missing translation in either direction removes
    the utterance with NO_TRANSLATION; projection failures remove it with
    the projection's reason.
    """
    crf, maxent = source_nlu
    kept: list[Utterance] = []
    removed: list[tuple[str, str]] = []
    for u in source_corpus:
        fwd = forward.translate(u.tokens, u.id)
        if fwd is None:
            removed.append((u.id, NO_TRANSLATION))
            continue
        try:
            projected = project_annotations(u, fwd, target_language)
        except ProjectionRejected as rejection:
            removed.append((u.id, rejection.reason))
            continue
        back = backward.translate(fwd.target_tokens, u.id)
        if back is None:
            removed.append((u.id, NO_TRANSLATION))
            continue
        if config.use_gold_labels:
            ref_intent, ref_slots = u.intent, u.slots
        else:
            posteriors = intent_posteriors(maxent, u.tokens)
            ref_intent = max(posteriors, key=posteriors.get)
            ref_slots = (
                tag_slots(crf, u.tokens) if config.mode == MODE_INTENT_SLOTS else ()
            )
        back_posteriors = intent_posteriors(maxent, back.target_tokens)
        back_intent = max(back_posteriors, key=back_posteriors.get)
        if (
            config.mode == MODE_INTENT_CONFIDENCE
            and back_posteriors.get(ref_intent, 0.0) < config.confidence_threshold
        ):
            removed.append((u.id, LOW_CONFIDENCE))
        elif back_intent != ref_intent:
            removed.append((u.id, INTENT_MISMATCH))
        elif config.mode == MODE_INTENT_SLOTS and _slot_key(
            tag_slots(crf, back.target_tokens), config.slot_comparison
        ) != _slot_key(ref_slots, config.slot_comparison):
            removed.append((u.id, SLOT_MISMATCH))
        else:
            kept.append(projected)
    return FilterOutcome(kept, removed)


# --- score filtering ---------------------------------------------------------


@dataclass(frozen=True)
class DomainStats:
    """Mean and population stdev of normalized scores in one domain."""

    domain: str
    mean: float
    stdev: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("domain stats need at least one utterance")
        if self.stdev < 0:
            raise ValueError("stdev must be non-negative")


def normalize_score(weighted_total: float, target_length: int) -> float:
    """Length-normalized translation score."""
    if target_length < 1:
        raise ValueError("target length must be >= 1")
    return weighted_total / target_length


def _normalized(u: Utterance, translations: Mapping[str, TranslationResult]) -> float:
    result = translations.get(u.id)
    if result is None:
        raise ConfigError("no translation scores for utterance %r" % u.id)
    return normalize_score(result.scores.weighted_total, len(result.target_tokens))


def compute_domain_stats(
    corpus: Sequence[Utterance], translations: Mapping[str, TranslationResult]
) -> dict[str, DomainStats]:
    """Per-domain mean and population stdev of normalized scores."""
    by_domain: dict[str, list[float]] = {}
    for u in corpus:
        by_domain.setdefault(u.domain, []).append(_normalized(u, translations))
    return {
        d: DomainStats(d, statistics.fmean(xs), statistics.pstdev(xs), len(xs))
        for d, xs in by_domain.items()
    }


def score_filter(
    corpus: Sequence[Utterance],
    translations: Mapping[str, TranslationResult],
    stats: Mapping[str, DomainStats],
    k: float | None,
) -> FilterOutcome:
    """Keep utterances whose normalized score is >= mean + k * stdev.

    k is signed: negative values widen the kept set below the domain mean,
    positive values keep only above-average translations.  k=None keeps
    everything.
    """
    missing = sorted({u.domain for u in corpus} - set(stats))
    if missing:
        raise ConfigError("no domain stats for: %s" % ", ".join(missing))
    kept: list[Utterance] = []
    removed: list[tuple[str, str]] = []
    for u in corpus:
        if k is None:
            kept.append(u)
            continue
        st = stats[u.domain]
        if _normalized(u, translations) >= st.mean + k * st.stdev:
            kept.append(u)
        else:
            removed.append((u.id, BELOW_THRESHOLD))
    return FilterOutcome(kept, removed)
