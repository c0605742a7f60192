import numpy as np
import pytest

from xladv.data import KEPT, Sentence, Token, read_compression_tsv
from xladv.metrics import compression_rate, sentence_accuracy, token_accuracy


def _random_corpus(rng, n_sent, length=None, n_labels=3, noise=0.2):
    gold, pred = [], []
    for _ in range(n_sent):
        n = length or int(rng.integers(1, 10))
        g = [f"L{k}" for k in rng.integers(0, n_labels, size=n)]
        p = [f"L{rng.integers(0, n_labels)}" if rng.random() < noise else x for x in g]
        gold.append(g)
        pred.append(p)
    return gold, pred


def _brute(gold, pred):
    tok_ok = tok_all = sent_ok = 0
    for g, p in zip(gold, pred):
        all_ok = True
        for i in range(len(g)):
            tok_all += 1
            if g[i] == p[i]:
                tok_ok += 1
            else:
                all_ok = False
        sent_ok += all_ok
    return 100.0 * tok_ok / tok_all, 100.0 * sent_ok / len(gold)


def test_brute_force_agreement():
    rng = np.random.default_rng(0)
    for _ in range(100):
        gold, pred = _random_corpus(rng, int(rng.integers(1, 30)), noise=float(rng.uniform(0, 0.5)))
        tok, sent = _brute(gold, pred)
        assert token_accuracy(gold, pred) == pytest.approx(tok, abs=1e-12)
        assert sentence_accuracy(gold, pred) == pytest.approx(sent, abs=1e-12)


def test_sentence_never_above_token_at_fixed_length():
    rng = np.random.default_rng(1)
    for _ in range(100):
        gold, pred = _random_corpus(rng, int(rng.integers(1, 30)), length=int(rng.integers(1, 10)))
        assert sentence_accuracy(gold, pred) <= token_accuracy(gold, pred) + 1e-12


def test_mixed_lengths_can_invert_the_order():
    gold = [["a"], ["a"] * 9]
    pred = [["a"], ["b"] * 9]
    assert sentence_accuracy(gold, pred) == 50.0
    assert token_accuracy(gold, pred) == 10.0


def test_small_worked_cases():
    gold = [["K", "D"], ["K"]]
    assert sentence_accuracy(gold, gold) == 100.0
    assert sentence_accuracy(gold, [["K", "K"], ["D"]]) == 0.0
    assert token_accuracy(gold, gold) == 100.0
    assert token_accuracy(gold, [["D", "K"], ["D"]]) == 0.0


def test_misaligned_input_raises():
    with pytest.raises(ValueError):
        token_accuracy([["a"]], [["a", "b"]])
    with pytest.raises(ValueError):
        sentence_accuracy([["a"]], [])
    with pytest.raises(ValueError):
        token_accuracy([], [])


def test_compression_rate_hand_file(tmp_path):
    path = tmp_path / "c.tsv"
    labels = ["KEPT", "DROPPED", "DROPPED", "KEPT", "DROPPED", "DROPPED", "DROPPED", "KEPT", "DROPPED", "DROPPED"]
    lines = [f"w{i}\t{l}" for i, l in enumerate(labels)]
    path.write_text("\n".join(lines[:4]) + "\n\n" + "\n".join(lines[4:]) + "\n\n\n")
    corpus = read_compression_tsv(path)
    assert len(corpus) == 2
    assert compression_rate(corpus) == 30.0


def test_compression_rate_extremes():
    toks = [Token("a"), Token("b")]
    assert compression_rate([Sentence(toks, [KEPT, KEPT])]) == 100.0
    assert compression_rate([Sentence(toks, ["DROPPED", "DROPPED"])]) == 0.0
    with pytest.raises(ValueError):
        compression_rate([Sentence(toks)])
