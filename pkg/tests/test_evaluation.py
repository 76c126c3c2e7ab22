import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clzsl.data import Corpus
from clzsl.errors import DataIntegrityError
from clzsl.evaluation import Metrics, evaluate, harmonic_mean, per_class_top1
from clzsl.mapping import MapParams
from clzsl.prototypes import PrototypeStore
from clzsl.tensor import Tensor
from oracles import per_class_accuracy


def test_all_correct_is_100():
    assert per_class_top1([0, 1, 2], [0, 1, 2], [0, 1, 2]) == 100.0


def test_per_class_averaging_not_sample_averaging():
    # class 0: 9 samples all correct, class 1: one sample wrong -> 50, not 90
    preds = [0] * 9 + [0]
    labels = [0] * 9 + [1]
    assert per_class_top1(preds, labels, [0, 1]) == 50.0


def test_per_class_matches_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        labels = rng.integers(0, 5, 40)
        preds = rng.integers(0, 5, 40)
        got = per_class_top1(preds, labels, range(5))
        assert got == pytest.approx(per_class_accuracy(preds, labels, range(5)), rel=1e-12)


def test_empty_class_excluded_with_warning(caplog):
    with caplog.at_level("WARNING"):
        acc = per_class_top1([0, 0], [0, 0], [0, 1])
    assert acc == 100.0
    assert "no samples" in caplog.text


def test_relabeling_invariance():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 4, 30)
    preds = rng.integers(0, 4, 30)
    base = per_class_top1(preds, labels, range(4))
    perm = rng.permutation(4)
    assert per_class_top1(perm[preds], perm[labels], range(4)) == pytest.approx(base, rel=1e-12)


def test_harmonic_paper_table_values():
    assert harmonic_mean(61.7, 85.3) == pytest.approx(71.6, abs=0.05)
    assert harmonic_mean(60.0, 49.2) == pytest.approx(54.1, abs=0.05)
    assert harmonic_mean(67.9, 73.1) == pytest.approx(70.4, abs=0.05)


def test_harmonic_equal_arguments():
    assert harmonic_mean(50.0, 50.0) == 50.0


def test_harmonic_zero_when_either_zero():
    assert harmonic_mean(0.0, 80.0) == 0.0
    assert harmonic_mean(0.0, 0.0) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 100.0), st.floats(0.0, 100.0))
def test_harmonic_symmetric_and_below_arithmetic(u, s):
    h = harmonic_mean(u, s)
    assert h == harmonic_mean(s, u)
    assert h <= (u + s) / 2.0 + 1e-12
    assert h <= max(u, s) + 1e-12


def _oracle_setup(scale=4.0):
    """Corpus whose features directly encode the class one-hot, with an
    identity semantic space, so the zero-attention model is a perfect
    predictor when W2 = I and W1 = 0."""
    num_seen, num_unseen = 3, 2
    c = num_seen + num_unseen
    n_per = 2
    feats = np.zeros((c * n_per, 1, c))
    cids = np.empty(c * n_per, dtype=np.intp)
    splits = np.empty(c * n_per, dtype="<U11")
    i = 0
    for cls in range(c):
        for _ in range(n_per):
            feats[i, 0, cls] = scale
            cids[i] = cls
            splits[i] = "test_seen" if cls < num_seen else "test_unseen"
            i += 1
    splits[0] = "train_seen"  # keep the corpus valid for training-side checks
    corpus = Corpus(feats, cids, splits, num_seen, num_unseen)
    params = MapParams(Tensor(np.zeros((c, c))), Tensor(np.eye(c)))
    store = PrototypeStore(np.eye(c), np.eye(c), num_seen, 0.5, 1)
    return corpus, params, store


def test_evaluate_oracle_predictor_scores_100():
    corpus, params, store = _oracle_setup()
    attributes = np.eye(corpus.num_classes)
    gz = evaluate(params, attributes, store, corpus, "gzsl")
    assert gz.acc_seen == 100.0 and gz.acc_unseen == 100.0 and gz.harmonic == 100.0
    cz = evaluate(params, attributes, store, corpus, "czsl")
    assert cz.acc_czsl == 100.0


def test_evaluate_constant_seen_predictor_zero_harmonic():
    corpus, params, store = _oracle_setup()
    attributes = np.eye(corpus.num_classes)
    # prototypes that give seen class 0 an overwhelming score everywhere
    rigged = np.zeros_like(store.current)
    rigged[0, :] = 100.0
    store.current = rigged
    gz = evaluate(params, attributes, store, corpus, "gzsl")
    assert gz.acc_unseen == 0.0
    assert gz.harmonic == 0.0


def test_evaluate_czsl_never_emits_seen_ids():
    corpus, params, store = _oracle_setup()
    attributes = np.eye(corpus.num_classes)
    rng = np.random.default_rng(2)
    store.current = rng.standard_normal(store.current.shape)
    from clzsl.evaluation import _predictions

    preds = _predictions(params, attributes, store.current, corpus, "test_unseen", "czsl", "regions")
    assert np.all(preds >= corpus.num_seen)


def test_evaluate_empty_split_errors():
    corpus, params, store = _oracle_setup()
    corpus.splits[corpus.splits == "test_unseen"] = "test_seen"
    with pytest.raises(DataIntegrityError, match="empty"):
        evaluate(params, np.eye(corpus.num_classes), store, corpus, "czsl")


def test_metrics_dict_shape():
    m = Metrics(acc_seen=10.0, acc_unseen=20.0, harmonic=harmonic_mean(20.0, 10.0))
    d = m.as_dict()
    assert set(d) == {"acc_czsl", "acc_seen", "acc_unseen", "harmonic"}
    assert d["acc_czsl"] is None
