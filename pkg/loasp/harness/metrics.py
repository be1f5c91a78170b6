"""Accuracy, macro F1 and macro one-vs-rest AUC."""

from __future__ import annotations

import logging
import warnings
from typing import Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn import metrics as skm

from loasp.types.errors import ContractViolation, ShapeError

logger = logging.getLogger(__name__)


def _as_labels(preds: Sequence[int], labels: Sequence[int]) -> tuple:
    p = np.asarray(preds, dtype=np.int64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size == 0:
        raise ContractViolation("metrics need at least one sample")
    if p.shape != y.shape:
        raise ShapeError("predictions and labels differ in length", [p.shape, y.shape])
    return p, y


def accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    p, y = _as_labels(preds, labels)
    return float(skm.accuracy_score(y, p))


def macro_f1(preds: Sequence[int], labels: Sequence[int]) -> float:
    """Unweighted mean F1 over every class seen in labels or predictions; 0/0 counts as 0."""
    p, y = _as_labels(preds, labels)
    return float(skm.f1_score(y, p, labels=np.union1d(p, y), average="macro", zero_division=0))


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann–Whitney AUC with average ranks for ties."""
    ranks = rankdata(scores, method="average")
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractViolation("AUC needs at least one positive and one negative")
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auc(scores: np.ndarray, labels: Sequence[int]) -> float:
    """Unweighted mean of one-vs-rest AUCs.

    Classes without positives or without negatives are skipped with a warning.
    If no class can be scored the result is 0.5.

    Args:
        scores: Array (N, C) of class scores or probabilities.
        labels: N integer labels in [0, C).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size == 0:
        raise ContractViolation("metrics need at least one sample")
    if s.ndim != 2 or s.shape[0] != y.size:
        raise ShapeError("scores must be (N, C) with one row per label", [s.shape, y.shape])
    aucs = []
    for c in range(s.shape[1]):
        positive = y == c
        if positive.all() or not positive.any():
            message = f"class {c} has no {'negatives' if positive.all() else 'positives'}; skipped in macro AUC"
            warnings.warn(message, RuntimeWarning, stacklevel=2)
            logger.debug(message)
            continue
        aucs.append(binary_auc(s[:, c], positive))
    if not aucs:
        return 0.5
    return float(np.mean(aucs))
