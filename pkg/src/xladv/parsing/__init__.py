from .head import greedy_decode, oracle_steps, transition_loss
from .system import (
    LEFT_ARC,
    RIGHT_ARC,
    ROOT_LABEL,
    SHIFT,
    DependencyTree,
    IllegalTransition,
    NonProjectiveError,
    ParserState,
    Transition,
    TransitionInventory,
    apply,
    is_acyclic,
    is_legal,
    is_projective,
    is_well_formed,
    las,
    left_arc,
    oracle,
    replay,
    right_arc,
    shift,
    uas,
)
