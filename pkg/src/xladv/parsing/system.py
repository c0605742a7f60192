"""Arc-standard transition system, static oracle and attachment scoring."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, List, Optional, Sequence, Tuple

ROOT_LABEL = "root"

SHIFT = 0
LEFT_ARC = 1
RIGHT_ARC = 2
_KIND_NAMES = {SHIFT: "SHIFT", LEFT_ARC: "LEFT_ARC", RIGHT_ARC: "RIGHT_ARC"}


class IllegalTransition(ValueError):
    pass


class NonProjectiveError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    kind: int
    label: Optional[Hashable] = None

    def __repr__(self) -> str:
        if self.kind == SHIFT:
            return "SHIFT"
        return f"{_KIND_NAMES[self.kind]}({self.label!r})"


def shift() -> Transition:
    return Transition(SHIFT)


def left_arc(label) -> Transition:
    return Transition(LEFT_ARC, label)


def right_arc(label) -> Transition:
    return Transition(RIGHT_ARC, label)


@dataclass
class DependencyTree:
    """``heads[i]`` is the head of token ``i + 1`` (0 is the artificial root)."""

    heads: List[int]
    labels: List[Hashable]

    def __post_init__(self):
        if len(self.heads) != len(self.labels):
            raise ValueError(
                f"DependencyTree: {len(self.heads)} heads but {len(self.labels)} labels"
            )
        n = len(self.heads)
        for i, h in enumerate(self.heads, start=1):
            if h == i:
                raise ValueError(f"DependencyTree: token {i} is its own head")
            if not 0 <= h <= n:
                raise ValueError(f"DependencyTree: head {h} of token {i} out of range 0..{n}")

    def __len__(self) -> int:
        return len(self.heads)

    def arcs(self) -> set:
        return {(h, d, l) for d, (h, l) in enumerate(zip(self.heads, self.labels), start=1)}


def is_acyclic(heads: Sequence[int]) -> bool:
    n = len(heads)
    for start in range(1, n + 1):
        seen = set()
        node = start
        while node != 0:
            if node in seen:
                return False
            seen.add(node)
            node = heads[node - 1]
    return True


def is_projective(heads: Sequence[int]) -> bool:
    """No two arcs cross when drawn above the sentence (root arc included)."""
    spans = [(min(h, d), max(h, d)) for d, h in enumerate(heads, start=1)]
    for a, (l1, r1) in enumerate(spans):
        for l2, r2 in spans[a + 1 :]:
            if l1 < l2 < r1 < r2 or l2 < l1 < r2 < r1:
                return False
    return True


def is_well_formed(tree: DependencyTree) -> bool:
    """Single-rooted, acyclic and projective."""
    return (
        len(tree) > 0
        and sum(1 for h in tree.heads if h == 0) == 1
        and is_acyclic(tree.heads)
        and is_projective(tree.heads)
    )


@dataclass
class ParserState:
    n: int
    stack: List[int] = field(default_factory=lambda: [0])
    buffer: List[int] = field(default_factory=list)
    arcs: List[Tuple[int, int, Hashable]] = field(default_factory=list)

    @classmethod
    def initial(cls, n: int) -> "ParserState":
        if n < 1:
            raise ValueError("ParserState: sentence must have at least one token")
        return cls(n=n, stack=[0], buffer=list(range(1, n + 1)), arcs=[])

    def copy(self) -> "ParserState":
        return ParserState(self.n, list(self.stack), list(self.buffer), list(self.arcs))

    @property
    def terminal(self) -> bool:
        return not self.buffer and self.stack == [0]

    def to_tree(self) -> DependencyTree:
        heads = [0] * self.n
        labels: list = [None] * self.n
        for h, d, l in self.arcs:
            heads[d - 1] = h
            labels[d - 1] = l
        return DependencyTree(heads, labels)


def is_legal(state: ParserState, t: Transition) -> bool:
    """Arc-standard preconditions, plus single-root constraints.

    RIGHT_ARC from the root is only allowed once the buffer is empty and only
    with the root label; the root label is never used below the root.
    """
    depth = len(state.stack)
    if t.kind == SHIFT:
        return bool(state.buffer)
    if depth < 2:
        return False
    second = state.stack[-2]
    if t.kind == LEFT_ARC:
        return second != 0 and t.label != ROOT_LABEL
    if t.kind == RIGHT_ARC:
        if second == 0:
            return not state.buffer and t.label == ROOT_LABEL
        return t.label != ROOT_LABEL
    return False


def apply(state: ParserState, t: Transition) -> ParserState:
    """Return the successor state; ``state`` is left untouched."""
    if not is_legal(state, t):
        raise IllegalTransition(f"{t!r} is illegal in state stack={state.stack} buffer={state.buffer}")
    nxt = state.copy()
    if t.kind == SHIFT:
        nxt.stack.append(nxt.buffer.pop(0))
    elif t.kind == LEFT_ARC:
        top = nxt.stack.pop()
        second = nxt.stack.pop()
        nxt.arcs.append((top, second, t.label))
        nxt.stack.append(top)
    else:
        top = nxt.stack.pop()
        nxt.arcs.append((nxt.stack[-1], top, t.label))
    return nxt


def oracle(tree: DependencyTree) -> List[Transition]:
    """Static oracle: LEFT_ARC if possible, RIGHT_ARC once the top is complete, else SHIFT."""
    if not is_well_formed(tree):
        if len(tree) and sum(1 for h in tree.heads if h == 0) == 1 and is_acyclic(tree.heads):
            raise NonProjectiveError(f"non-projective tree: heads={tree.heads}")
        raise ValueError(f"oracle needs a single-rooted acyclic tree, got heads={tree.heads}")
    heads = [None] + list(tree.heads)
    labels = [None] + list(tree.labels)
    pending = [0] * (len(tree) + 1)
    for h in tree.heads:
        pending[h] += 1
    state = ParserState.initial(len(tree))
    out = []
    while not state.terminal:
        t = None
        if len(state.stack) >= 2:
            top, second = state.stack[-1], state.stack[-2]
            if second != 0 and heads[second] == top:
                t = left_arc(labels[second])
            elif heads[top] == second and pending[top] == 0:
                t = right_arc(labels[top])
        if t is None:
            t = shift()
        if t.kind == LEFT_ARC:
            pending[state.stack[-1]] -= 1
        elif t.kind == RIGHT_ARC:
            pending[state.stack[-2]] -= 1
        state = apply(state, t)
        out.append(t)
    return out


def replay(n: int, transitions: Iterable[Transition]) -> ParserState:
    state = ParserState.initial(n)
    for t in transitions:
        state = apply(state, t)
    return state


class TransitionInventory:
    """Dense ids for SHIFT and the labelled arc transitions.

    Id 0 is SHIFT, then LEFT_ARC for every label, then RIGHT_ARC for every
    label, in the given label order.
    """

    def __init__(self, labels: Sequence[Hashable]):
        self.labels = list(labels)
        self.transitions = (
            [shift()] + [left_arc(l) for l in self.labels] + [right_arc(l) for l in self.labels]
        )
        self._index = {t: i for i, t in enumerate(self.transitions)}

    def __len__(self) -> int:
        return len(self.transitions)

    def index(self, t: Transition) -> int:
        return self._index[t]

    def legal_mask(self, state: ParserState) -> list:
        return [is_legal(state, t) for t in self.transitions]


def las(gold: Sequence[DependencyTree], pred: Sequence[DependencyTree]) -> float:
    """Labelled attachment score in percent over all tokens."""
    if len(gold) != len(pred):
        raise ValueError(f"las: {len(gold)} gold trees but {len(pred)} predicted")
    total = correct = 0
    for k, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise ValueError(f"las: sentence {k} has {len(g)} gold tokens but {len(p)} predicted")
        total += len(g)
        correct += sum(
            1 for gh, gl, ph, pl in zip(g.heads, g.labels, p.heads, p.labels) if gh == ph and gl == pl
        )
    if total == 0:
        raise ValueError("las: no tokens")
    return 100.0 * correct / total


def uas(gold: Sequence[DependencyTree], pred: Sequence[DependencyTree]) -> float:
    if len(gold) != len(pred):
        raise ValueError(f"uas: {len(gold)} gold trees but {len(pred)} predicted")
    total = sum(len(g) for g in gold)
    correct = sum(sum(1 for a, b in zip(g.heads, p.heads) if a == b) for g, p in zip(gold, pred))
    return 100.0 * correct / total
