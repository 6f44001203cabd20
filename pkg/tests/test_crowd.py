import numpy as np
import pytest

from mlpalda.crowd import (
    ADVERSARIAL_BUCKETS,
    DEFAULT_BUCKETS,
    AnnotatorPool,
    ann_rmse,
    annotate_corpus,
    sample_pool,
)
from mlpalda.model import Document


def tiny_docs(D, C, seed=0):
    rng = np.random.default_rng(seed)
    return [
        Document(
            doc_id=f"d{d}",
            word_ids=np.array([0]),
            counts=np.array([1]),
            true_labels=rng.integers(0, 2, size=C),
        )
        for d in range(D)
    ]


def test_default_pool_shape_and_ranges():
    pool = sample_pool(DEFAULT_BUCKETS, seed=1)
    assert pool.size == 50 and pool.per_doc_count == 5
    q = pool.qualities
    assert np.all((q[:10] >= 0.51) & (q[:10] <= 0.65))
    assert np.all((q[10:30] >= 0.66) & (q[10:30] <= 0.85))
    assert np.all((q[30:] >= 0.86) & (q[30:] <= 0.9999))


def test_adversarial_pool_contains_flippers():
    pool = sample_pool(ADVERSARIAL_BUCKETS, seed=1)
    assert pool.size == 50
    assert np.all(pool.qualities[:10] <= 0.1)


def test_degenerate_bucket_gives_exact_quality():
    pool = sample_pool([(1, 0.9, 0.9)], seed=3, per_doc_count=1)
    np.testing.assert_array_equal(pool.qualities, [0.9])


def test_pool_sampling_is_deterministic():
    a = sample_pool(DEFAULT_BUCKETS, seed=42)
    b = sample_pool(DEFAULT_BUCKETS, seed=42)
    np.testing.assert_array_equal(a.qualities, b.qualities)
    c = sample_pool(DEFAULT_BUCKETS, seed=43)
    assert np.abs(a.qualities - c.qualities).max() > 0


def test_pool_validation():
    with pytest.raises(ValueError, match="bucket"):
        AnnotatorPool(np.array([0.9]), buckets=((1, 0.0, 0.5),))
    with pytest.raises(ValueError, match="add up"):
        AnnotatorPool(np.array([0.9, 0.8]), buckets=((1, 0.5, 0.6),))
    with pytest.raises(ValueError, match="per-document"):
        AnnotatorPool(np.array([0.9]), buckets=(), per_doc_count=2)
    with pytest.raises(ValueError, match="qualities"):
        AnnotatorPool(np.array([1.2]), buckets=())
    # hand-built edge qualities are allowed
    AnnotatorPool(np.array([0.0, 1.0]), buckets=(), per_doc_count=1)


def test_each_document_gets_exactly_the_subset_size():
    docs = tiny_docs(30, C=3)
    pool = sample_pool(DEFAULT_BUCKETS, seed=5)
    labeled, truth = annotate_corpus(docs, pool, seed=7)
    assert truth.shape == (30, 3)
    for doc in labeled:
        judged = np.any(doc.crowd_labels != -1, axis=1)
        assert judged.sum() == 5
        # a selected annotator judges every class
        assert np.all(doc.crowd_labels[judged] != -1)
        assert np.all(doc.crowd_labels[~judged] == -1)


def test_noiseless_and_full_flip_limits():
    docs = tiny_docs(20, C=4)
    truth = np.stack([d.true_labels for d in docs])
    perfect = AnnotatorPool(np.array([1.0]), buckets=(), per_doc_count=1)
    labeled, _ = annotate_corpus(docs, perfect, seed=0)
    for d, doc in enumerate(labeled):
        np.testing.assert_array_equal(doc.crowd_labels[0], truth[d])
    liar = AnnotatorPool(np.array([0.0]), buckets=(), per_doc_count=1)
    labeled, _ = annotate_corpus(docs, liar, seed=0)
    for d, doc in enumerate(labeled):
        np.testing.assert_array_equal(doc.crowd_labels[0], 1 - truth[d])


def test_empirical_flip_rate_matches_quality():
    rho = 0.8
    docs = tiny_docs(3000, C=4, seed=2)
    truth = np.stack([d.true_labels for d in docs])
    pool = AnnotatorPool(np.array([rho]), buckets=(), per_doc_count=1)
    labeled, _ = annotate_corpus(docs, pool, seed=11)
    votes = np.stack([d.crowd_labels[0] for d in labeled])
    flips = (votes != truth).mean()  # 12000 judgments
    assert abs(flips - (1 - rho)) < 0.02


def test_annotation_deterministic_per_document():
    docs = tiny_docs(12, C=2)
    pool = sample_pool(DEFAULT_BUCKETS, seed=3)
    full, _ = annotate_corpus(docs, pool, seed=9)
    again, _ = annotate_corpus(docs, pool, seed=9)
    prefix, _ = annotate_corpus(docs[:5], pool, seed=9)
    for a, b in zip(full, again):
        np.testing.assert_array_equal(a.crowd_labels, b.crowd_labels)
    for a, b in zip(full, prefix):  # streams are per (seed, position)
        np.testing.assert_array_equal(a.crowd_labels, b.crowd_labels)
    other, _ = annotate_corpus(docs, pool, seed=10)
    assert any(
        np.any(a.crowd_labels != b.crowd_labels) for a, b in zip(full, other)
    )


def test_truth_is_erased_and_inputs_untouched():
    docs = tiny_docs(6, C=2)
    pool = sample_pool(DEFAULT_BUCKETS, seed=0)
    labeled, truth = annotate_corpus(docs, pool, seed=1)
    for src, out, row in zip(docs, labeled, truth):
        assert out.true_labels is None
        assert src.true_labels is not None  # input untouched
        np.testing.assert_array_equal(src.true_labels, row)
        assert out.word_ids is src.word_ids  # words shared, not copied


def test_unlabeled_input_is_rejected():
    doc = Document("x", np.array([0]), np.array([1]))
    pool = sample_pool(DEFAULT_BUCKETS, seed=0)
    with pytest.raises(ValueError, match="x"):
        annotate_corpus([doc], pool, seed=0)


def test_mask_fraction_hides_judgments():
    docs = tiny_docs(50, C=4)
    pool = sample_pool(DEFAULT_BUCKETS, seed=2)
    full, _ = annotate_corpus(docs, pool, seed=4, mask_fraction=0.0)
    hidden, _ = annotate_corpus(docs, pool, seed=4, mask_fraction=1.0)
    partial, _ = annotate_corpus(docs, pool, seed=4, mask_fraction=0.4)
    assert all(np.all(d.crowd_labels == -1) for d in hidden)
    n_full = sum((d.crowd_labels != -1).sum() for d in full)
    n_part = sum((d.crowd_labels != -1).sum() for d in partial)
    assert n_full == 50 * 5 * 4
    assert 0 < n_part < n_full
    # surviving judgments are exactly the unmasked originals
    for a, b in zip(full, partial):
        kept = b.crowd_labels != -1
        np.testing.assert_array_equal(b.crowd_labels[kept], a.crowd_labels[kept])
    with pytest.raises(ValueError):
        annotate_corpus(docs, pool, seed=4, mask_fraction=1.5)


def test_rmse_examples_and_properties():
    assert ann_rmse([0.5, 0.7], [0.5, 0.7]) == 0.0
    assert ann_rmse(np.full(50, 0.6), np.full(50, 0.5)) == pytest.approx(0.1)
    a = np.array([0.2, 0.9, 0.55])
    b = np.array([0.25, 0.8, 0.6])
    assert ann_rmse(a, b) == pytest.approx(ann_rmse(b, a))
    assert ann_rmse(a, b) > 0
    with pytest.raises(ValueError):
        ann_rmse(a, b[:2])
