import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from xladv import AdversarialParser, AdversarialTagger
from xladv.data import Sentence, Token
from xladv.model import ConfigError
from xladv.parsing import DependencyTree

SMALL = dict(d_word=8, d_pos=4, d_cluster=2, d_label=4, hidden=8, tagger_hidden=16, disc_hidden=8)


def _tagger(**kw):
    args = dict(SMALL, epochs=2, batch_size=8)
    args.update(kw)
    return AdversarialTagger(**args)


def test_sklearn_parameter_protocol():
    est = _tagger(objective="gan", lam=0.2)
    params = est.get_params()
    assert params["objective"] == "gan" and params["lam"] == 0.2
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(lam=0.5)
    assert est.lam == 0.5
    assert AdversarialParser().get_params()["objective"] == "none"


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        _tagger().predict([Sentence([Token("a")])])


def test_fit_predict_score_transform(small_bundle):
    b = small_bundle
    est = _tagger(vocabulary=b.vocab, word_vectors=b.embeddings)
    est.fit(b.source_labeled, X_target=b.target_unlabeled)
    pred = est.predict(b.test)
    assert [len(p) for p in pred] == [len(s) for s in b.test]
    assert set(t for p in pred for t in p) <= set(est.classes_)
    score = est.score(b.test)
    assert 0.0 <= score <= 100.0
    feats = est.transform(b.test[:3])
    assert [f.shape for f in feats] == [(len(s), 16) for s in b.test[:3]]
    assert len(est.history_) == est.n_epochs_ == 2


def test_fit_rejects_bad_input(small_bundle):
    with pytest.raises(ValueError):
        _tagger().fit([])
    with pytest.raises(ValueError):
        _tagger().fit(small_bundle.target_unlabeled)
    with pytest.raises(ConfigError):
        _tagger(objective="gr").fit(small_bundle.source_labeled)
    with pytest.raises(ConfigError):
        _tagger(objective="wgan", clip_c=-1).fit(small_bundle.source_labeled)


def _trajectory(bundle, **kw):
    snaps = []

    def on_step(report, params):
        if report is not None:
            snaps.append([t.value.copy() for t in params.generator_tensors() + params.tagger_tensors()])

    est = _tagger(vocabulary=bundle.vocab, word_vectors=bundle.embeddings, seed=4, **kw)
    est.fit(bundle.source_labeled, X_target=bundle.target_unlabeled, on_step=on_step)
    return est, snaps


def test_gr_zero_lambda_reproduces_baseline(small_bundle):
    base, a = _trajectory(small_bundle, objective="none")
    gr, b = _trajectory(small_bundle, objective="gr", lam=0.0)
    assert len(a) == len(b) > 0
    for x, y in zip(a, b):
        assert all(np.array_equal(u, v) for u, v in zip(x, y))
    assert base.predict(small_bundle.test) == gr.predict(small_bundle.test)
    assert [r["o_t"] for r in base.history_] == [r["o_t"] for r in gr.history_]


def test_wgan_clip_every_critic_update(small_bundle):
    bounds = []

    def on_step(report, params):
        bounds.append(max(float(np.abs(t.value).max()) for t in params.discriminator_tensors()))

    est = _tagger(objective="wgan", clip_c=0.02, lr_discriminator=0.5, vocabulary=small_bundle.vocab)
    est.fit(small_bundle.source_labeled, X_target=small_bundle.target_unlabeled, on_step=on_step)
    assert len(bounds) > 5 and max(bounds) <= 0.02
    assert all(r["max_abs_d"] <= 0.02 for r in est.history_)


def test_seeded_fit_is_deterministic(small_bundle):
    def run():
        est = _tagger(objective="gan", dropout=0.1, vocabulary=small_bundle.vocab, seed=9)
        est.fit(small_bundle.source_labeled, X_target=small_bundle.target_unlabeled)
        return est.history_, est.predict(small_bundle.test)

    assert run() == run()


def test_early_stopping_restores_best(small_bundle):
    est = _tagger(epochs=6, patience=1, vocabulary=small_bundle.vocab, lr_tagger=2.0, lr_generator=2.0)
    est.fit(small_bundle.source_labeled, X_dev=small_bundle.dev)
    best = max(r["dev"] for r in est.history_)
    assert est.score(small_bundle.dev) == pytest.approx(best)


def test_on_epoch_can_stop(small_bundle):
    est = _tagger(epochs=5, vocabulary=small_bundle.vocab)
    est.fit(small_bundle.source_labeled, on_epoch=lambda rec, e: rec.setdefault("seen", True))
    assert est.n_epochs_ == 1 and est.history_[0]["seen"] is True


def test_word_vector_dict():
    sents = [Sentence([Token("a"), Token("b")], ["X", "Y"]), Sentence([Token("b")], ["Y"])]
    vectors = {"a": np.ones(3), "b": -np.ones(3), "c": np.zeros(3)}
    est = _tagger(word_vectors=vectors).fit(sents)
    assert "c" in est.vocabulary_.words
    np.testing.assert_array_equal(est.params_.bank.word.value[est.vocabulary_.words["a"]], np.ones(3))


def test_parser_fit_and_skips(small_bundle):
    bad = Sentence([Token("s_1"), Token("s_2"), Token("s_3"), Token("s_4")], None,
                   DependencyTree([3, 4, 0, 3], ["a", "a", "root", "a"]))
    est = AdversarialParser(**SMALL, epochs=1, vocabulary=small_bundle.vocab, objective="gr")
    est.fit(small_bundle.source_labeled + [bad], X_target=small_bundle.target_unlabeled)
    assert est.n_skipped_ == 1
    assert est.classes_[0] == "root"
    trees = est.predict(small_bundle.test[:5])
    assert all(len(t) == len(s) for t, s in zip(trees, small_bundle.test[:5]))
    assert 0.0 <= est.score(small_bundle.test) <= 100.0
