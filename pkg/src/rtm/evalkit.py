"""Ranking metrics, answer-triggering evaluation, and the k-slice variance study.

Candidates are ordered by score descending with ties broken by ascending
candidate id, so results never depend on loader order.  MAP, MRR and P@1
are computed in exact rational arithmetic and converted to float once at
the end; for the small rationals involved this makes results bitwise
comparable against independent oracles.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .numkit import make_rng


class UndefinedMetricError(ValueError):
    """No groups remain after exclusion rules."""


@dataclass
class RankedGroup:
    """Scores aligned with labels for one question's candidates."""

    qid: str
    pairs: list  # (aid, score, label)

    def __post_init__(self):
        if not self.pairs:
            raise ValueError(f"ranked group {self.qid!r} has no candidates")
        for aid, score, label in self.pairs:
            if not math.isfinite(score):
                raise ValueError(f"non-finite score for {self.qid!r}/{aid!r}")

    def ranked(self):
        """Pairs sorted by score descending, ties by ascending aid."""
        return sorted(self.pairs, key=lambda p: (-p[1], p[0]))

    def has_positive(self):
        return any(label == 1 for _, _, label in self.pairs)


@dataclass
class TriggerResult:
    threshold: float
    precision: float
    recall: float
    f1: float
    predictions: int = 0
    correct: int = 0


def _included(groups, include_no_positive):
    kept = groups if include_no_positive else [g for g in groups if g.has_positive()]
    if not kept:
        raise UndefinedMetricError("no groups with a positive label to evaluate")
    return kept


def average_precision(group):
    """Mean over positive ranks of (positives at or above rank) / rank."""
    ranked = group.ranked()
    hits = 0
    total = Fraction(0)
    for rank, (_, _, label) in enumerate(ranked, start=1):
        if label == 1:
            hits += 1
            total += Fraction(hits, rank)
    if hits == 0:
        return 0.0
    return float(total / hits)


def _average_precision_exact(group):
    ranked = group.ranked()
    hits = 0
    total = Fraction(0)
    for rank, (_, _, label) in enumerate(ranked, start=1):
        if label == 1:
            hits += 1
            total += Fraction(hits, rank)
    return total / hits if hits else Fraction(0)


def map_score(groups, include_no_positive=False):
    kept = _included(groups, include_no_positive)
    total = sum((_average_precision_exact(g) for g in kept), Fraction(0))
    return float(total / len(kept))


def mrr(groups, include_no_positive=False):
    kept = _included(groups, include_no_positive)
    total = Fraction(0)
    for g in kept:
        for rank, (_, _, label) in enumerate(g.ranked(), start=1):
            if label == 1:
                total += Fraction(1, rank)
                break
    return float(total / len(kept))


def p_at_1(groups, include_no_positive=False):
    kept = _included(groups, include_no_positive)
    hits = sum(1 for g in kept if g.ranked()[0][2] == 1)
    return float(Fraction(hits, len(kept)))


def trigger_eval(groups, threshold, include_untriggerable=False):
    """Predict each question's top candidate iff its score exceeds the threshold.

    A prediction is correct iff the predicted candidate is labeled 1.
    Precision is over predictions made (0 when none), recall over questions
    that have at least one correct answer.  By default questions without any
    correct answer are excluded up front.
    """
    if not include_untriggerable:
        groups = [g for g in groups if g.has_positive()]
    predictions = 0
    correct = 0
    triggerable = 0
    for g in groups:
        if g.has_positive():
            triggerable += 1
        top_aid, top_score, top_label = g.ranked()[0]
        if top_score > threshold:
            predictions += 1
            if top_label == 1:
                correct += 1
    precision = correct / predictions if predictions else 0.0
    recall = correct / triggerable if triggerable else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return TriggerResult(threshold, precision, recall, f1, predictions, correct)


def tune_threshold(dev_groups, include_untriggerable=False):
    """Threshold maximizing dev F1; ties resolved toward the lowest threshold."""
    if not dev_groups:
        raise ValueError("tune_threshold: empty dev set")
    tops = sorted({g.ranked()[0][1] for g in dev_groups})
    candidates = [-math.inf] + tops + [math.inf]
    best_threshold = None
    best_f1 = -1.0
    for threshold in candidates:
        f1 = trigger_eval(dev_groups, threshold, include_untriggerable).f1
        if f1 > best_f1:
            best_f1 = f1
            best_threshold = threshold
    return best_threshold


def assign_folds(groups, folds, seed):
    """Deterministic question-level fold ids via a seeded shuffle."""
    if folds < 2:
        raise ValueError("assign_folds: need at least 2 folds")
    order = make_rng(seed).permutation(len(groups))
    fold_of = {}
    for position, group_index in enumerate(order):
        fold_of[groups[group_index].qid] = position % folds
    return fold_of


@dataclass
class KFoldReport:
    k: int
    maps: list
    mean: float
    max_deviation: float  # max |run - mean|
    value_range: float  # max - min


def kfold_variance(groups, features, store, base_config, k_values, folds, seed=0):
    """Train on folds-1 question folds, score MAP on the held-out fold.

    Runs folds times per k value; each run trains for the configured number
    of epochs without early stopping (there is no held-out dev set inside a
    fold).  Returns a list of KFoldReport.
    """
    from dataclasses import replace

    from .trainer import train

    fold_of = assign_folds(groups, folds, seed)
    reports = []
    for k in k_values:
        config = replace(base_config, k=int(k))
        maps = []
        for fold in range(folds):
            train_groups = [g for g in groups if fold_of[g.qid] != fold]
            held_out = [g for g in groups if fold_of[g.qid] == fold]
            state, _ = train(
                train_groups, None, features, store, config, early_stopping=False
            )
            ranked = score_groups(held_out, features, state, config)
            maps.append(map_score(ranked))
        mean = sum(maps) / len(maps)
        reports.append(
            KFoldReport(
                k=int(k),
                maps=maps,
                mean=mean,
                max_deviation=max(abs(m - mean) for m in maps),
                value_range=max(maps) - min(maps),
            )
        )
    return reports


def score_groups(groups, features, state, config):
    """Model scores for every candidate, shaped for the metric functions."""
    from .trainer import forward

    ranked = []
    for g in groups:
        pairs = []
        for ex in g.examples:
            fv = features[(ex.qid, ex.aid)]
            s, _ = forward(ex, fv, state, config, train_mode=False)
            pairs.append((ex.aid, s, int(ex.label)))
        ranked.append(RankedGroup(qid=g.qid, pairs=pairs))
    return ranked
