"""Simulated annotator pools: heterogeneous and adversarial label noise.

Each annotator has a single quality rho: the chance that any one of their
class judgments equals the true presence bit, independently per class.  A
document is judged by a fixed-size subset of the pool drawn uniformly
without replacement; everyone else stays at -1 (no judgment) for that
document.  Label generation is deterministic given (seed, document index),
so corpora can be annotated in parallel or incrementally without changing
the outcome.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Document

# quality ranges: (how many annotators, low, high) for uniform sampling
DEFAULT_BUCKETS = ((10, 0.51, 0.65), (20, 0.66, 0.85), (20, 0.86, 0.9999))
ADVERSARIAL_BUCKETS = ((10, 0.0001, 0.1), (15, 0.51, 0.65), (20, 0.66, 0.85), (5, 0.86, 0.9999))


@dataclass(frozen=True)
class AnnotatorPool:
    qualities: np.ndarray          # (K,) true per-annotator correctness rates
    buckets: tuple                 # the ranges the pool was drawn from
    per_doc_count: int = 5

    def __post_init__(self):
        q = np.asarray(self.qualities, dtype=np.float64)
        if q.ndim != 1 or q.size < 1:
            raise ValueError("AnnotatorPool: need at least one annotator")
        # closed bounds so the exact noiseless / full-flip edge cases are
        # constructible by hand; sampled buckets stay strictly inside (0,1)
        if np.any(q < 0.0) or np.any(q > 1.0):
            raise ValueError("AnnotatorPool: qualities must lie in [0, 1]")
        for cnt, low, high in self.buckets:
            if cnt < 1 or not (0.0 < low <= high < 1.0):
                raise ValueError(f"AnnotatorPool: bad bucket ({cnt}, {low}, {high})")
        if self.buckets and sum(b[0] for b in self.buckets) != q.size:
            raise ValueError("AnnotatorPool: bucket counts do not add up to pool size")
        if not 1 <= self.per_doc_count <= q.size:
            raise ValueError("AnnotatorPool: per-document count must be in [1, K]")
        object.__setattr__(self, "qualities", q)
        object.__setattr__(self, "buckets", tuple(tuple(b) for b in self.buckets))

    @property
    def size(self) -> int:
        return int(self.qualities.size)


def sample_pool(buckets, seed, per_doc_count=5) -> AnnotatorPool:
    """Draw one quality per annotator, uniformly from its bucket's range."""
    rng = np.random.default_rng(seed)
    parts = [rng.uniform(low, high, size=cnt) for cnt, low, high in buckets]
    if not parts:
        raise ValueError("sample_pool: need at least one bucket")
    return AnnotatorPool(
        qualities=np.concatenate(parts), buckets=tuple(buckets), per_doc_count=per_doc_count
    )


def annotate_corpus(corpus, pool: AnnotatorPool, seed, mask_fraction=0.0):
    """Generate crowd judgments for a fully-labeled corpus.

    Returns (annotated_docs, truth): new documents carrying only words and
    a (K, C) judgment matrix (true labels erased), plus the (D, C) truth
    kept aside for evaluation.  ``mask_fraction`` optionally hides that
    fraction of the generated judgments again (partial labeling).
    """
    if not 0.0 <= mask_fraction <= 1.0:
        raise ValueError("annotate_corpus: mask_fraction must be in [0, 1]")
    K = pool.size
    out_docs = []
    truth = []
    for idx, doc in enumerate(corpus):
        lam = doc.true_labels
        if lam is None or not np.all(np.isin(lam, (0, 1))):
            raise ValueError(f"annotate_corpus: document {doc.doc_id} lacks known labels")
        C = lam.size
        rng = np.random.default_rng([seed, idx])
        chosen = rng.choice(K, size=pool.per_doc_count, replace=False)
        y = np.full((K, C), -1, dtype=np.int64)
        for j in chosen:
            flip = rng.random(C) >= pool.qualities[j]
            y[j] = np.where(flip, 1 - lam, lam)
        if mask_fraction > 0.0:
            for j in chosen:
                y[j, rng.random(C) < mask_fraction] = -1
        out_docs.append(
            Document(
                doc_id=doc.doc_id,
                word_ids=doc.word_ids,
                counts=doc.counts,
                true_labels=None,
                crowd_labels=y,
            )
        )
        truth.append(lam.copy())
    return out_docs, np.array(truth, dtype=np.int64)


def ann_rmse(estimated, truth) -> float:
    """Root-mean-square gap between estimated and true annotator qualities."""
    est = np.asarray(estimated, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    if est.shape != tru.shape or est.ndim != 1:
        raise ValueError("ann_rmse: need two equal-length vectors")
    return float(np.sqrt(np.mean((est - tru) ** 2)))
