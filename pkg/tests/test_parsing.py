import numpy as np
import pytest

from xladv.autodiff import Graph, parameter
from xladv.layers import FfnParams
from xladv.parsing import (
    DependencyTree,
    IllegalTransition,
    NonProjectiveError,
    ParserState,
    TransitionInventory,
    apply,
    greedy_decode,
    is_legal,
    is_projective,
    is_well_formed,
    las,
    left_arc,
    oracle,
    oracle_steps,
    replay,
    right_arc,
    shift,
    transition_loss,
    uas,
)

from conftest import random_projective_tree

LABELS = ["root", "a", "b", "c"]


def test_shift_example():
    s = apply(ParserState(1, [0], [1], []), shift())
    assert s.stack == [0, 1] and s.buffer == []


def test_left_arc_example():
    s = apply(ParserState(2, [0, 1, 2], [], []), left_arc("l"))
    assert s.arcs == [(2, 1, "l")] and s.stack == [0, 2]


def test_apply_leaves_input_untouched():
    s = ParserState.initial(2)
    apply(s, shift())
    assert s.stack == [0] and s.buffer == [1, 2]


def test_illegal_transitions():
    s = ParserState.initial(2)
    assert not is_legal(s, left_arc("a"))
    with pytest.raises(IllegalTransition):
        apply(s, right_arc("root"))
    s = apply(s, shift())
    # root attachment waits for an empty buffer and needs the root label
    assert not is_legal(s, right_arc("root"))
    assert not is_legal(apply(s, shift()), left_arc("root"))
    s = apply(ParserState.initial(1), shift())
    assert not is_legal(s, right_arc("a")) and is_legal(s, right_arc("root"))
    assert not is_legal(s, left_arc("a"))


def test_smallest_oracle():
    assert oracle(DependencyTree([0], ["root"])) == [shift(), right_arc("root")]


def test_chain_oracle():
    tree = DependencyTree([0, 1, 2], ["root", "x", "y"])
    assert oracle(tree) == [shift(), shift(), shift(), right_arc("y"), right_arc("x"), right_arc("root")]


def test_oracle_rejects_bad_trees():
    with pytest.raises(NonProjectiveError):
        oracle(DependencyTree([3, 4, 0, 3], ["a", "a", "root", "a"]))
    with pytest.raises(ValueError):
        oracle(DependencyTree([0, 0], ["root", "root"]))
    with pytest.raises(ValueError):
        DependencyTree([1], ["a"])


def test_projectivity_examples():
    assert is_projective([2, 0, 2])
    assert not is_projective([3, 4, 0, 3])
    assert not is_well_formed(DependencyTree([2, 1], ["a", "b"]))


def test_inventory_order():
    inv = TransitionInventory(["root", "a"])
    assert inv.transitions == [shift(), left_arc("root"), left_arc("a"), right_arc("root"), right_arc("a")]
    assert inv.index(right_arc("a")) == 4


def test_random_trees_round_trip():
    rng = np.random.default_rng(0)
    gold, pred = [], []
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        tree = random_projective_tree(rng, n)
        assert is_well_formed(tree)
        seq = oracle(tree)
        assert len(seq) == 2 * n
        state = replay(n, seq)
        assert state.terminal
        out = state.to_tree()
        assert out.heads == tree.heads and out.labels == tree.labels
        gold.append(tree)
        pred.append(out)
    assert las(gold, pred) == 100.0


def test_random_legal_rollouts_take_2n_steps():
    rng = np.random.default_rng(1)
    inv = TransitionInventory(LABELS)
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        state = ParserState.initial(n)
        steps = 0
        while not state.terminal:
            legal = np.flatnonzero(inv.legal_mask(state))
            assert legal.size, f"dead end at stack={state.stack} buffer={state.buffer}"
            state = apply(state, inv.transitions[int(rng.choice(legal))])
            steps += 1
        assert steps == 2 * n
        tree = state.to_tree()
        assert is_well_formed(tree)
        assert [l == "root" for l in tree.labels] == [h == 0 for h in tree.heads]


def test_las_uas_by_hand():
    gold = [DependencyTree([2, 0, 2, 3, 3], ["a", "root", "b", "a", "c"])]
    pred = [DependencyTree([2, 0, 2, 2, 3], ["a", "root", "a", "a", "c"])]
    assert las(gold, pred) == 60.0
    assert uas(gold, pred) == 80.0
    with pytest.raises(ValueError):
        las(gold, [DependencyTree([0], ["root"])])
    with pytest.raises(ValueError):
        las(gold, [])


def _zero_head(inv, dim):
    ffn = FfnParams.init(np.random.default_rng(0), [3 * dim, 4, len(inv)])
    w, b, _ = ffn.layers[-1]
    w.value[...] = 0.0
    b.value[...] = 0.0
    return ffn


def test_zeroed_head_loss_is_mean_log_legal():
    rng = np.random.default_rng(2)
    inv = TransitionInventory(LABELS)
    trees = [random_projective_tree(rng, 5) for _ in range(3)]
    feats = parameter(rng.normal(size=(15, 2)))
    _, _, legal = oracle_steps(trees, inv, 3)
    expected = np.mean(np.log(legal.sum(axis=1)))
    loss = transition_loss(Graph(), _zero_head(inv, 2), feats, trees, inv)
    assert abs(loss.item() - expected) < 1e-12


def test_single_token_has_two_decisions():
    inv = TransitionInventory(LABELS)
    rows, gold, legal = oracle_steps([DependencyTree([0], ["root"])], inv, 1)
    assert len(rows) == 2 and gold.tolist() == [0, inv.index(right_arc("root"))]


def test_greedy_decode_single_token():
    inv = TransitionInventory(LABELS)
    ffn = FfnParams.init(np.random.default_rng(3), [6, 4, len(inv)])
    (tree,) = greedy_decode(Graph(), ffn, parameter(np.ones((1, 2))), 1, 1, inv)
    assert tree.heads == [0] and tree.labels == ["root"]


def test_greedy_decode_ties_prefer_lowest_id():
    inv = TransitionInventory(LABELS)
    ffn = _zero_head(inv, 2)
    trees = greedy_decode(Graph(), ffn, parameter(np.zeros((8, 2))), 4, 2, inv)
    # all scores equal: SHIFT whenever legal, then the lowest legal arc (LEFT_ARC 'a')
    for tree in trees:
        assert tree.heads == [4, 4, 4, 0]
        assert tree.labels == ["a", "a", "a", "root"]
