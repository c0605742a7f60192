"""Evaluation scores, all in percent."""
from __future__ import annotations

from typing import Sequence

from .data import compression_rate
from .parsing.system import las, uas

__all__ = ["token_accuracy", "sentence_accuracy", "las", "uas", "compression_rate"]


def _aligned(gold: Sequence[Sequence], pred: Sequence[Sequence], name: str) -> None:
    if len(gold) != len(pred):
        raise ValueError(f"{name}: {len(gold)} gold sentences but {len(pred)} predicted")
    for k, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise ValueError(f"{name}: sentence {k} has {len(g)} gold and {len(p)} predicted tokens")


def token_accuracy(gold: Sequence[Sequence], pred: Sequence[Sequence]) -> float:
    _aligned(gold, pred, "token_accuracy")
    total = sum(len(g) for g in gold)
    if total == 0:
        raise ValueError("token_accuracy: no tokens")
    correct = sum(1 for g, p in zip(gold, pred) for a, b in zip(g, p) if a == b)
    return 100.0 * correct / total


def sentence_accuracy(gold: Sequence[Sequence], pred: Sequence[Sequence]) -> float:
    """Share of sentences whose every token label is correct."""
    _aligned(gold, pred, "sentence_accuracy")
    if not gold:
        raise ValueError("sentence_accuracy: no sentences")
    exact = sum(1 for g, p in zip(gold, pred) if list(g) == list(p))
    return 100.0 * exact / len(gold)
