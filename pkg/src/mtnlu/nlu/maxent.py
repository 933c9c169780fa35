"""Maximum-entropy (multinomial logistic regression) intent classifier.

The softmax posterior doubles as the intent confidence used by round-trip
filtering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from ..corpus import Catalog, Utterance
from .crf import _dump_model, _gazetteers_from_json, _gazetteers_to_json, _index_to_list, _load_model
from .features import Gazetteers, intent_features
from .optim import TrainingConfig, minimize


@dataclass(eq=False)
class MaxEntModel:
    intents: tuple[str, ...]
    feature_index: dict[str, int]
    weights: np.ndarray  # (n_features, n_intents)
    gazetteers: dict[str, Catalog] = field(default_factory=dict)
    l2: float = 0.0

    def __post_init__(self):
        self.intents = tuple(self.intents)
        self.weights = np.asarray(self.weights, dtype=float)
        if not self.intents:
            raise ValueError("intent set must be non-empty")
        if self.weights.shape != (len(self.feature_index), len(self.intents)):
            raise ValueError("weights shape mismatch")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    def _feature_ids(self, tokens: Sequence[str]) -> np.ndarray:
        feats = intent_features(tokens, self.gazetteers)
        return np.asarray(
            [self.feature_index[f] for f in feats if f in self.feature_index],
            dtype=np.int64,
        )

    def posterior(self, tokens: Sequence[str]) -> np.ndarray:
        """Softmax posterior over intents, aligned with `self.intents`."""
        ids = self._feature_ids(tokens)
        logits = self.weights[ids].sum(axis=0) if ids.size else np.zeros(len(self.intents))
        return np.exp(logits - logsumexp(logits))

    def save(self, path) -> None:
        obj = {
            "format": "maxent-model",
            "version": 1,
            "l2": self.l2,
            "intents": list(self.intents),
            "features": _index_to_list(self.feature_index),
            "weights": self.weights.tolist(),
            "gazetteers": _gazetteers_to_json(self.gazetteers),
        }
        _dump_model(obj, path)

    @classmethod
    def load(cls, path) -> "MaxEntModel":
        obj = _load_model(path, "maxent-model")
        return cls(
            intents=tuple(obj["intents"]),
            feature_index={f: i for i, f in enumerate(obj["features"])},
            weights=np.asarray(obj["weights"], dtype=float),
            gazetteers=_gazetteers_from_json(obj["gazetteers"]),
            l2=obj["l2"],
        )


def classify_intent(model: MaxEntModel, tokens: Sequence[str]) -> tuple[str, float]:
    """Most probable intent and its posterior; ties take the first intent."""
    p = model.posterior(tokens)
    best = int(np.argmax(p))
    return model.intents[best], float(p[best])


def intent_posteriors(model: MaxEntModel, tokens: Sequence[str]) -> dict[str, float]:
    """Full posterior keyed by intent, in model intent order."""
    p = model.posterior(tokens)
    return {intent: float(p[i]) for i, intent in enumerate(model.intents)}


def _design(model_features: dict[str, int], rows_features: list[np.ndarray]):
    rows, cols = [], []
    for r, ids in enumerate(rows_features):
        rows.extend([r] * len(ids))
        cols.extend(ids.tolist())
    return sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)),
        shape=(len(rows_features), len(model_features)),
    )


def _nll_and_grad(X, y: np.ndarray, weights: np.ndarray, l2: float):
    logits = np.asarray(X @ weights)
    log_z = logsumexp(logits, axis=1)
    value = float(log_z.sum() - logits[np.arange(len(y)), y].sum())
    P = np.exp(logits - log_z[:, None])
    P[np.arange(len(y)), y] -= 1.0
    grad = np.asarray(X.T @ P)
    value += 0.5 * l2 * float(np.sum(weights**2))
    grad += l2 * weights
    return value, grad


def maxent_objective(
    model: MaxEntModel, corpus: Sequence[tuple[Sequence[str], str]]
) -> tuple[float, np.ndarray]:
    """Regularized NLL of (tokens, intent) pairs and its gradient."""
    intent_index = {intent: i for i, intent in enumerate(model.intents)}
    rows = []
    y = []
    for tokens, intent in corpus:
        if intent not in intent_index:
            raise ValueError("intent %r not in model intent set" % intent)
        rows.append(model._feature_ids(tokens))
        y.append(intent_index[intent])
    X = _design(model.feature_index, rows)
    return _nll_and_grad(X, np.asarray(y, dtype=np.int64), model.weights, model.l2)


def train_intent_classifier(
    corpus: Sequence[Utterance],
    hyper: TrainingConfig = TrainingConfig(),
    gazetteers: Gazetteers | None = None,
) -> MaxEntModel:
    """Fit classifier weights; deterministic for identical inputs."""
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    gazetteers = dict(gazetteers or {})
    intents = tuple(sorted({u.intent for u in corpus}))
    intent_index = {intent: i for i, intent in enumerate(intents)}
    feature_index: dict[str, int] = {}
    rows = []
    y = []
    for u in corpus:
        ids = []
        for f in intent_features(u.tokens, gazetteers):
            if f not in feature_index:
                feature_index[f] = len(feature_index)
            ids.append(feature_index[f])
        rows.append(np.asarray(ids, dtype=np.int64))
        y.append(intent_index[u.intent])
    X = _design(feature_index, rows)
    y_arr = np.asarray(y, dtype=np.int64)
    F, K = len(feature_index), len(intents)

    def fun_grad(x: np.ndarray):
        value, grad = _nll_and_grad(X, y_arr, x.reshape(F, K), hyper.l2)
        return value, grad.ravel()

    result = minimize(fun_grad, np.zeros(F * K), hyper.max_iterations, hyper.tolerance)
    return MaxEntModel(
        intents=intents,
        feature_index=feature_index,
        weights=result.x.reshape(F, K),
        gazetteers=gazetteers,
        l2=hyper.l2,
    )
