"""Filtered ranking metrics for link prediction and label accuracy.

Rank rule: for a query, candidates present in the filter set (other than the
true fact itself) are removed, and

    rank = 1 + #{strictly better candidates} + floor(#{tied candidates} / 2)

with ties counted by exact float equality.  The rule is fixed so that an
independent enumeration oracle can match it bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .data import Binary
from .model import (
    ExplicitConfig,
    config_class_scores,
    config_scores_all_heads,
    config_scores_all_tails,
)

HEAD_SIDE = "head"
TAIL_SIDE = "tail"


@dataclass(frozen=True)
class Metrics:
    """Mean rank, mean reciprocal rank, and Hits@k over ranking queries."""

    mr: float
    mrr: float
    hits: dict[int, float]
    n_queries: int

    def to_records(self) -> list[tuple[str, str]]:
        records = [
            ("queries", str(self.n_queries)),
            ("mr", repr(self.mr)),
            ("mrr", repr(self.mrr)),
        ]
        records.extend((f"hits@{k}", repr(v)) for k, v in sorted(self.hits.items()))
        return records

    def table_row(self, label: str) -> str:
        hits10 = self.hits.get(10, float("nan"))
        return f"{label}\t{self.mr:.1f}\t{self.mrr:.4f}\t{hits10:.4f}"


class FilterIndex:
    """Known-true lookup for candidate filtering, keyed per corruption side."""

    def __init__(self, facts: Iterable[Binary]):
        self.heads_of: dict[tuple[int, int], set[int]] = {}
        self.tails_of: dict[tuple[int, int], set[int]] = {}
        for fact in facts:
            self.heads_of.setdefault((fact.rel, fact.tail), set()).add(fact.head)
            self.tails_of.setdefault((fact.rel, fact.head), set()).add(fact.tail)

    def known_heads(self, rel: int, tail: int) -> set[int]:
        return self.heads_of.get((rel, tail), set())

    def known_tails(self, rel: int, head: int) -> set[int]:
        return self.tails_of.get((rel, head), set())


def rank_from_scores(scores: np.ndarray, true_index: int, excluded: set[int]) -> int:
    """Rank of the true candidate among the non-excluded ones."""
    true_score = scores[true_index]
    mask = np.ones(len(scores), dtype=bool)
    for idx in excluded:
        if idx != true_index:
            mask[idx] = False
    mask[true_index] = False
    others = scores[mask]
    strictly_better = int(np.sum(others < true_score))
    tied = int(np.sum(others == true_score))
    return 1 + strictly_better + tied // 2


def rank_fact(
    config: ExplicitConfig,
    fact: Binary,
    corrupt_side: str,
    filter_index: FilterIndex | None = None,
) -> int:
    """Filtered rank of a fact against all substitutions of one side."""
    if corrupt_side == HEAD_SIDE:
        scores = config_scores_all_heads(config, fact.rel, fact.tail)
        excluded = filter_index.known_heads(fact.rel, fact.tail) if filter_index else set()
        return rank_from_scores(scores, fact.head, excluded)
    if corrupt_side == TAIL_SIDE:
        scores = config_scores_all_tails(config, fact.rel, fact.head)
        excluded = filter_index.known_tails(fact.rel, fact.head) if filter_index else set()
        return rank_from_scores(scores, fact.tail, excluded)
    raise ValueError(f"corrupt_side must be '{HEAD_SIDE}' or '{TAIL_SIDE}'")


def metrics_from_ranks(ranks, ks: tuple[int, ...] = (1, 3, 10)) -> Metrics:
    """MR / MRR / Hits@k from a list of integer ranks."""
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    return Metrics(
        mr=float(ranks.mean()),
        mrr=float((1.0 / ranks).mean()),
        hits={k: float((ranks <= k).mean()) for k in ks},
        n_queries=len(ranks),
    )


def ranking_metrics(
    config: ExplicitConfig,
    eval_facts: Iterable[Binary],
    filter_facts: Iterable[Binary] | None = None,
    ks: tuple[int, ...] = (1, 3, 10),
) -> Metrics:
    """Metrics over head- and tail-corruption queries for every fact."""
    eval_facts = list(eval_facts)
    if not eval_facts:
        raise ValueError("evaluation set must be non-empty")
    filter_index = FilterIndex(filter_facts) if filter_facts is not None else None
    ranks = []
    for fact in eval_facts:
        ranks.append(rank_fact(config, fact, HEAD_SIDE, filter_index))
        ranks.append(rank_fact(config, fact, TAIL_SIDE, filter_index))
    return metrics_from_ranks(ranks, ks)


def classify_entities(config: ExplicitConfig, entities: Iterable[int]) -> dict[int, int]:
    """Predicted class per entity: argmin class score, ties to the lowest index."""
    if config.n_classes == 0:
        raise ValueError("no classes defined")
    entities = list(entities)
    if not entities:
        return {}
    scores = config_class_scores(config, entities)
    picks = np.argmin(scores, axis=1)
    return {int(ent): int(cls) for ent, cls in zip(entities, picks)}


def accuracy(predictions: Mapping[int, int], gold: Mapping[int, int]) -> float:
    """Fraction of gold entities predicted exactly."""
    if not gold:
        raise ValueError("gold label map must be non-empty")
    missing = [ent for ent in gold if ent not in predictions]
    if missing:
        raise ValueError(f"missing predictions for {len(missing)} entities")
    hits = sum(1 for ent, cls in gold.items() if predictions[ent] == cls)
    return hits / len(gold)
