import numpy as np
import pytest

from xladv.autodiff import Graph, relative_error
from xladv.data import SynthConfig, synth_bilingual
from xladv.model import Batch, ModelParams
from xladv.parsing.system import DependencyTree, TransitionInventory

TINY = dict(d_word=3, d_pos=2, d_cluster=2, d_label=2, hidden=3, tagger_hidden=4, disc_hidden=4)


def random_projective_tree(rng, n, labels=("a", "b", "c")):
    """Uniform-ish random projective tree: pick a span head, then cut each
    side into consecutive dependent subtrees."""
    heads = [0] * n
    rels = [None] * n

    def build(lo, hi, parent):
        m = int(rng.integers(lo, hi))
        heads[m] = parent
        rels[m] = "root" if parent == 0 else str(labels[rng.integers(len(labels))])
        for a, b in (segments(lo, m), segments(m + 1, hi)):
            for s, e in zip(a, b):
                build(s, e, m + 1)

    def segments(lo, hi):
        if lo >= hi:
            return [], []
        cuts = sorted(set(int(c) for c in rng.integers(lo + 1, hi + 1, size=rng.integers(0, hi - lo))))
        starts = [lo] + [c for c in cuts if c < hi]
        ends = starts[1:] + [hi]
        return starts, ends

    build(0, n, 0)
    return DependencyTree(heads, rels)


def random_batch(rng, n_words, n_pos, n_clusters, size, length, language=None, n_labels=0, trees=False):
    langs = (
        np.full(size, language, dtype=np.int64)
        if language is not None
        else rng.integers(0, 2, size=size)
    )
    batch = Batch(
        word_ids=rng.integers(0, n_words, size=(size, length)),
        pos_ids=rng.integers(0, n_pos, size=(size, length)),
        cluster_ids=rng.integers(0, n_clusters, size=(size, length)),
        language_ids=langs,
    )
    if n_labels:
        batch.labels = rng.integers(0, n_labels, size=(size, length))
    if trees:
        batch.trees = [random_projective_tree(rng, length) for _ in range(size)]
    return batch


def tiny_params(seed, objective="none", head="tagger", n_labels=3, conditioning="previous", **kw):
    inventory = TransitionInventory(["root", "a", "b", "c"]) if head == "parser" else None
    dims = dict(TINY)
    dims.update(kw)
    return ModelParams.init(
        seed,
        n_words=6,
        n_pos=3,
        n_clusters=3,
        n_labels=n_labels,
        objective=objective,
        head=head,
        conditioning=conditioning,
        inventory=inventory,
        train_words=True,
        **dims,
    )


def check_gradients(build_loss, tensors, rng, h=1e-5, coords=4, factor=None):
    """Max relative error between backprop and central differences on up to
    ``coords`` random entries of every tensor.

    ``factor`` maps ``id(tensor)`` to a multiplier expected between the two
    (backprop = factor * finite difference), e.g. behind a reversal layer.
    """
    factor = factor or {}
    for t in tensors:
        t.grad = None
    graph = Graph()
    loss = build_loss(graph)
    graph.backward(loss)
    centre = loss.item()
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.value)
        flat = t.value.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
        numeric = np.empty(len(picks))
        smooth = np.ones(len(picks), dtype=bool)
        for j, i in enumerate(picks):
            orig = flat[i]
            flat[i] = orig + h
            up = build_loss(Graph()).item()
            flat[i] = orig - h
            down = build_loss(Graph()).item()
            flat[i] = orig
            numeric[j] = factor.get(id(t), 1.0) * (up - down) / (2 * h)
            # a relu hinge within h of the point makes the one-sided slopes disagree
            right, left = (up - centre) / h, (centre - down) / h
            smooth[j] = abs(right - left) <= 1e-3 * max(1.0, abs(right), abs(left))
        worst = max(worst, relative_error(analytic.reshape(-1)[picks][smooth], numeric[smooth]))
        KINKS.append(int((~smooth).sum()))
    return worst


KINKS = []


@pytest.fixture(scope="session")
def small_bundle():
    cfg = SynthConfig(
        seed=3, n_source=60, n_target_labeled=30, n_target_unlabeled=60, n_dev=10, n_test=30,
        vocab_size=60, n_tags=4, dim=8, max_len=6,
    )
    return synth_bilingual(cfg)
