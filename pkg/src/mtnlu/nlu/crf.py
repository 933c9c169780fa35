"""Linear-chain CRF slot tagger over BIO labels.

Potentials are linear: per-position emission weights indexed by extracted
features plus a dense label-transition matrix.  The negative log-likelihood
and its gradient are computed with the forward-backward recursions in log
space; decoding uses Viterbi.  Sequences are batched by length so training
stays fast at corpus scale, but the math is exactly the per-sequence
textbook form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from ..corpus import Catalog, CatalogEntry, SlotSpan, Utterance, make_span
from .features import Gazetteers, sequence_features
from .optim import TrainingConfig, minimize

OUTSIDE = "O"


def bio_labels(slot_types: Iterable[str]) -> tuple[str, ...]:
    """Label set: O plus B-/I- pairs for each slot type, in sorted order."""
    labels = [OUTSIDE]
    for t in sorted(set(slot_types)):
        labels.append("B-" + t)
        labels.append("I-" + t)
    return tuple(labels)


def bio_encode(utterance: Utterance) -> list[str]:
    labels = [OUTSIDE] * len(utterance.tokens)
    for slot in utterance.slots:
        labels[slot.start] = "B-" + slot.slot_type
        for i in range(slot.start + 1, slot.end):
            labels[i] = "I-" + slot.slot_type
    return labels


def bio_decode(tokens: Sequence[str], labels: Sequence[str]) -> tuple[SlotSpan, ...]:
    """Turn a BIO label sequence into spans.

    An I-X that does not continue an open X span (after O, at the start, or
    after a different type) is repaired by treating it as B-X.
    """
    if len(tokens) != len(labels):
        raise ValueError("got %d labels for %d tokens" % (len(labels), len(tokens)))
    spans: list[SlotSpan] = []
    open_type: str | None = None
    start = 0
    for i, label in enumerate(labels):
        if label == OUTSIDE:
            if open_type is not None:
                spans.append(make_span(tokens, open_type, start, i))
                open_type = None
        elif label.startswith("B-") or (
            label.startswith("I-") and label[2:] != open_type
        ):
            if open_type is not None:
                spans.append(make_span(tokens, open_type, start, i))
            open_type = label[2:]
            start = i
        elif not label.startswith("I-"):
            raise ValueError("bad BIO label %r" % label)
    if open_type is not None:
        spans.append(make_span(tokens, open_type, start, len(labels)))
    return tuple(spans)


@dataclass(eq=False)
class CrfModel:
    """Weights plus everything needed to featurize new inputs."""

    labels: tuple[str, ...]
    feature_index: dict[str, int]
    emissions: np.ndarray  # (n_features, n_labels)
    transitions: np.ndarray  # (n_labels, n_labels)
    gazetteers: dict[str, Catalog] = field(default_factory=dict)
    l2: float = 0.0

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.emissions = np.asarray(self.emissions, dtype=float)
        self.transitions = np.asarray(self.transitions, dtype=float)
        L = len(self.labels)
        if OUTSIDE not in self.labels:
            raise ValueError("label set must contain O")
        types = {lab[2:] for lab in self.labels if lab != OUTSIDE}
        for t in types:
            if "B-" + t not in self.labels or "I-" + t not in self.labels:
                raise ValueError("label set not BIO-closed for type %r" % t)
        if self.emissions.shape != (len(self.feature_index), L):
            raise ValueError("emissions shape mismatch")
        if self.transitions.shape != (L, L):
            raise ValueError("transitions shape mismatch")
        if not (
            np.all(np.isfinite(self.emissions)) and np.all(np.isfinite(self.transitions))
        ):
            raise ValueError("weights must be finite")

    def feature_ids(self, tokens: Sequence[str]) -> list[np.ndarray]:
        """Known-feature ids per position; unseen features are dropped."""
        out = []
        for feats in sequence_features(tokens, self.gazetteers):
            ids = [self.feature_index[f] for f in feats if f in self.feature_index]
            out.append(np.asarray(ids, dtype=np.int64))
        return out

    def emission_scores(self, tokens: Sequence[str]) -> np.ndarray:
        ids = self.feature_ids(tokens)
        E = np.zeros((len(tokens), len(self.labels)))
        for t, row in enumerate(ids):
            if row.size:
                E[t] = self.emissions[row].sum(axis=0)
        return E

    def save(self, path) -> None:
        obj = {
            "format": "crf-model",
            "version": 1,
            "l2": self.l2,
            "labels": list(self.labels),
            "features": _index_to_list(self.feature_index),
            "emissions": self.emissions.tolist(),
            "transitions": self.transitions.tolist(),
            "gazetteers": _gazetteers_to_json(self.gazetteers),
        }
        _dump_model(obj, path)

    @classmethod
    def load(cls, path) -> "CrfModel":
        obj = _load_model(path, "crf-model")
        return cls(
            labels=tuple(obj["labels"]),
            feature_index={f: i for i, f in enumerate(obj["features"])},
            emissions=np.asarray(obj["emissions"], dtype=float),
            transitions=np.asarray(obj["transitions"], dtype=float),
            gazetteers=_gazetteers_from_json(obj["gazetteers"]),
            l2=obj["l2"],
        )


def _index_to_list(index: dict[str, int]) -> list[str]:
    out = [""] * len(index)
    for f, i in index.items():
        out[i] = f
    return out


def _gazetteers_to_json(gazetteers: Gazetteers) -> list:
    return [
        [t, [[list(e.tokens), e.weight] for e in gazetteers[t].entries]]
        for t in sorted(gazetteers)
    ]


def _gazetteers_from_json(obj) -> dict[str, Catalog]:
    return {
        t: Catalog(t, tuple(CatalogEntry(tuple(tok), w) for tok, w in entries))
        for t, entries in obj
    }


def _dump_model(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _load_model(path, expected_format: str):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != expected_format or obj.get("version") != 1:
        raise ValueError(
            "%s is not a version-1 %s file" % (path, expected_format)
        )
    return obj


# --- objective --------------------------------------------------------------


class _Design:
    """Sparse feature matrix and length-grouped label arrays for a corpus."""

    def __init__(self, sequences, n_features: int, n_labels: int):
        # sequences: list of (list of per-position feature-id arrays, label ids)
        self.n_labels = n_labels
        rows, cols = [], []
        offsets = []
        pos = 0
        for fid_lists, _ in sequences:
            offsets.append(pos)
            for t, ids in enumerate(fid_lists):
                rows.extend([pos + t] * len(ids))
                cols.extend(ids.tolist())
            pos += len(fid_lists)
        self.n_positions = pos
        self.phi = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)),
            shape=(pos, n_features),
        )
        by_length: dict[int, list[int]] = {}
        for idx, (fid_lists, _) in enumerate(sequences):
            by_length.setdefault(len(fid_lists), []).append(idx)
        self.groups = []
        for T in sorted(by_length):
            members = by_length[T]
            row_idx = np.asarray(
                [[offsets[i] + t for t in range(T)] for i in members], dtype=np.int64
            )
            labels = np.asarray(
                [sequences[i][1] for i in members], dtype=np.int64
            )
            self.groups.append((T, row_idx, labels))

    def nll_and_grad(self, emissions: np.ndarray, transitions: np.ndarray, l2: float):
        """Regularized NLL and its gradient over the whole design."""
        M = np.asarray(self.phi @ emissions)
        G_pos = np.zeros_like(M)
        g_tr = np.zeros_like(transitions)
        value = 0.0
        for T, row_idx, labels in self.groups:
            E = M[row_idx]  # (N, T, L)
            N = E.shape[0]
            alpha = np.empty_like(E)
            alpha[:, 0] = E[:, 0]
            for t in range(1, T):
                alpha[:, t] = E[:, t] + logsumexp(
                    alpha[:, t - 1][:, :, None] + transitions[None, :, :], axis=1
                )
            log_z = logsumexp(alpha[:, T - 1], axis=1)
            beta = np.zeros_like(E)
            for t in range(T - 2, -1, -1):
                beta[:, t] = logsumexp(
                    transitions[None, :, :]
                    + (E[:, t + 1] + beta[:, t + 1])[:, None, :],
                    axis=2,
                )
            node = np.exp(alpha + beta - log_z[:, None, None])
            G_pos[row_idx] = node
            G_pos[row_idx.ravel(), labels.ravel()] -= 1.0
            for t in range(1, T):
                pair = np.exp(
                    alpha[:, t - 1][:, :, None]
                    + transitions[None, :, :]
                    + (E[:, t] + beta[:, t])[:, None, :]
                    - log_z[:, None, None]
                )
                g_tr += pair.sum(axis=0)
            np.subtract.at(
                g_tr, (labels[:, :-1].ravel(), labels[:, 1:].ravel()), 1.0
            )
            gold_emission = np.take_along_axis(E, labels[:, :, None], axis=2).sum()
            gold_transition = transitions[labels[:, :-1], labels[:, 1:]].sum()
            value += float(log_z.sum() - gold_emission - gold_transition)
        g_em = np.asarray(self.phi.T @ G_pos)
        value += 0.5 * l2 * (float(np.sum(emissions**2)) + float(np.sum(transitions**2)))
        g_em += l2 * emissions
        g_tr += l2 * transitions
        return value, g_em, g_tr


def _design_for(model: CrfModel, corpus) -> _Design:
    label_index = {lab: i for i, lab in enumerate(model.labels)}
    sequences = []
    for tokens, labels in corpus:
        if len(tokens) != len(labels):
            raise ValueError("token/label length mismatch")
        try:
            label_ids = [label_index[lab] for lab in labels]
        except KeyError as exc:
            raise ValueError("label %s not in model label set" % exc) from None
        sequences.append((model.feature_ids(tokens), label_ids))
    return _Design(sequences, len(model.feature_index), len(model.labels))


def crf_objective(model: CrfModel, corpus) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Regularized NLL of labeled sequences and its gradient.

    `corpus` holds (tokens, BIO labels) pairs.  Returns the objective value
    and gradients with the shapes of (emissions, transitions).
    """
    design = _design_for(model, corpus)
    value, g_em, g_tr = design.nll_and_grad(model.emissions, model.transitions, model.l2)
    return value, (g_em, g_tr)


# --- decoding ---------------------------------------------------------------


def viterbi(model: CrfModel, tokens: Sequence[str]) -> tuple[list[str], float]:
    """Highest-scoring label sequence and its unnormalized score."""
    tokens = tuple(tokens)
    if not tokens:
        raise ValueError("cannot tag an empty token sequence")
    E = model.emission_scores(tokens)
    T, L = E.shape
    delta = E[0]
    back = np.zeros((T, L), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + model.transitions  # (prev, next)
        back[t] = np.argmax(cand, axis=0)
        delta = E[t] + np.max(cand, axis=0)
    last = int(np.argmax(delta))
    score = float(delta[last])
    path = [last]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return [model.labels[i] for i in path], score


def tag_slots(model: CrfModel, tokens: Sequence[str]) -> tuple[SlotSpan, ...]:
    """Decode tokens into slot spans (BIO repair applied)."""
    labels, _ = viterbi(model, tokens)
    return bio_decode(tokens, labels)


# --- training ---------------------------------------------------------------


def train_slot_tagger(
    corpus: Sequence[Utterance],
    hyper: TrainingConfig = TrainingConfig(),
    gazetteers: Gazetteers | None = None,
) -> CrfModel:
    """Fit CRF weights on an annotated corpus.

    Deterministic: the label set is sorted, the feature index is built in
    first-seen corpus order, and the optimizer takes the same path for the
    same inputs.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    gazetteers = dict(gazetteers or {})
    labels = bio_labels(s.slot_type for u in corpus for s in u.slots)
    label_index = {lab: i for i, lab in enumerate(labels)}
    feature_index: dict[str, int] = {}
    sequences = []
    for u in corpus:
        fid_lists = []
        for feats in sequence_features(u.tokens, gazetteers):
            ids = []
            for f in feats:
                if f not in feature_index:
                    feature_index[f] = len(feature_index)
                ids.append(feature_index[f])
            fid_lists.append(np.asarray(ids, dtype=np.int64))
        label_ids = [label_index[lab] for lab in bio_encode(u)]
        sequences.append((fid_lists, label_ids))
    design = _Design(sequences, len(feature_index), len(labels))
    F, L = len(feature_index), len(labels)

    def fun_grad(x: np.ndarray):
        em = x[: F * L].reshape(F, L)
        tr = x[F * L :].reshape(L, L)
        value, g_em, g_tr = design.nll_and_grad(em, tr, hyper.l2)
        return value, np.concatenate([g_em.ravel(), g_tr.ravel()])

    result = minimize(
        fun_grad, np.zeros(F * L + L * L), hyper.max_iterations, hyper.tolerance
    )
    return CrfModel(
        labels=labels,
        feature_index=feature_index,
        emissions=result.x[: F * L].reshape(F, L),
        transitions=result.x[F * L :].reshape(L, L),
        gazetteers=gazetteers,
        l2=hyper.l2,
    )
