"""Prediction, accuracy and the symmetric disparate-impact ratio."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import Dataset, ModelParams
from .logit_math import sigmoid


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class Confusion:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricPair:
    accuracy: float
    disparate_impact: float


def predict_prob(params: ModelParams, features_row, stratum_index: int | None = None) -> float:
    """Probability for one row; ``stratum_index`` is 0-based, None if unknown."""
    eta = params.beta0 + float(np.dot(params.beta, features_row))
    if stratum_index is not None and 0 <= stratum_index < params.b.shape[0]:
        eta += params.b[stratum_index]
    return float(sigmoid(eta))


def stratum_index(train_ids: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Map original stratum labels to indices of ``train_ids`` (-1 when unseen)."""
    train_ids = np.asarray(train_ids)
    labels = np.asarray(labels)
    if train_ids.size == 0:
        return np.full(labels.shape, -1)
    pos = np.searchsorted(train_ids, labels)
    pos = np.clip(pos, 0, len(train_ids) - 1)
    found = train_ids[pos] == labels
    return np.where(found, pos, -1)


def predict_proba(
    params: ModelParams, features: np.ndarray, b_index: np.ndarray | None = None
) -> np.ndarray:
    """Vectorised :func:`predict_prob`; rows with ``b_index < 0`` use ``b = 0``."""
    eta = params.beta0 + np.asarray(features, dtype=float) @ params.beta
    if b_index is not None and params.b.shape[0]:
        b_index = np.asarray(b_index)
        known = b_index >= 0
        eta = eta + np.where(known, params.b[np.where(known, b_index, 0)], 0.0)
    return sigmoid(eta)


def predict_dataset(params: ModelParams, data: Dataset, train_ids: np.ndarray) -> np.ndarray:
    """Class predictions on ``data`` using strata labels known from training."""
    idx = stratum_index(train_ids, data.stratum_ids[data.group])
    return classify(predict_proba(params, data.features, idx))


def classify(prob):
    """1 where ``prob >= 0.5``."""
    out = (np.asarray(prob) >= 0.5).astype(int)
    return out if out.ndim else int(out)


def confusion(predictions, labels) -> Confusion:
    yh = np.asarray(predictions).astype(int)
    y = np.asarray(labels).astype(int)
    return Confusion(
        tp=int(np.sum((yh == 1) & (y == 1))),
        tn=int(np.sum((yh == 0) & (y == 0))),
        fp=int(np.sum((yh == 1) & (y == 0))),
        fn=int(np.sum((yh == 0) & (y == 1))),
    )


def accuracy(conf: Confusion) -> float:
    if conf.total == 0:
        raise MetricError("accuracy of an empty confusion matrix")
    return (conf.tp + conf.tn) / conf.total


def disparate_impact(predictions, sensitive) -> float:
    """``min(r, 1/r)`` for the ratio of positive rates between the two groups.

    No positives in either group counts as parity (1.0); positives in only one
    group count as total disparity (0.0).
    """
    yh = np.asarray(predictions).astype(float)
    s = np.asarray(sensitive)
    g1, g0 = yh[s == 1], yh[s == 0]
    if g1.size == 0 or g0.size == 0:
        raise MetricError("disparate impact needs both sensitive groups")
    r1, r0 = g1.mean(), g0.mean()
    if r1 == 0.0 and r0 == 0.0:
        return 1.0
    if r1 == 0.0 or r0 == 0.0:
        return 0.0
    return float(min(r1 / r0, r0 / r1))


def evaluate(params: ModelParams, data: Dataset, train_ids: np.ndarray) -> MetricPair:
    pred = predict_dataset(params, data, train_ids)
    return MetricPair(
        accuracy=accuracy(confusion(pred, data.labels)),
        disparate_impact=disparate_impact(pred, data.sensitive),
    )
