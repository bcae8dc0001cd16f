"""World-state schemas, the frame rule, maintenance rules, and virtual ticks."""

import pytest
from hypothesis import given, strategies as st

from btcell import bt, world
from btcell.atoms import ActionInstance, Atom
from btcell.errors import (
    DomainMismatch,
    DuplicateAtom,
    PreconditionUnsatisfied,
    UnknownObject,
    UnknownSymbol,
    VirtualFailure,
)
from btcell.world import (
    ConstraintSet,
    M1Report,
    M2Report,
    PerceptionParams,
    WorldState,
    apply_effects,
    diff,
    init_state,
    update_state,
    virtual_tick,
)

OBJECTS = frozenset({"gripper", "gear1", "shaft1", "base"})


def _state(P=(), R=(), positions=None, poses=None):
    return WorldState(OBJECTS, set(P), set(R),
                      dict(positions or {}), dict(poses or {}))


def _constraints(*atoms):
    return ConstraintSet(set(atoms))


# Per-schema grounding used by the frame-rule suite: action instance plus a
# state/constraint pair satisfying its preconditions.
_FRAME_CASES = {
    "pick_up": (
        ActionInstance.of("pick_up", "gripper", "gear1"),
        _state(P=[Atom.of("is_empty", "gripper"), Atom.of("pose_is_known", "gear1")],
               poses={"gear1": (1.0, 2.0, 0.0)}),
        _constraints(),
    ),
    "put_down": (
        ActionInstance.of("put_down", "gripper", "gear1"),
        _state(R=[Atom.of("hold", "gripper", "gear1")]),
        _constraints(),
    ),
    "insert": (
        ActionInstance.of("insert", "gripper", "gear1", "shaft1"),
        _state(P=[Atom.of("pose_is_known", "shaft1")],
               R=[Atom.of("hold", "gripper", "gear1")],
               poses={"shaft1": (3.0, 4.0, 0.0)}),
        _constraints(Atom.of("can_insert_to", "gear1", "shaft1")),
    ),
    "engage": (
        ActionInstance.of("engage", "gripper", "gear1", "shaft1"),
        _state(P=[Atom.of("pose_is_known", "shaft1")],
               R=[Atom.of("hold", "gripper", "gear1")],
               poses={"shaft1": (3.0, 4.0, 0.0)}),
        _constraints(Atom.of("can_engage_with", "gear1", "shaft1")),
    ),
    "place": (
        ActionInstance.of("place", "gripper", "gear1", "base"),
        _state(P=[Atom.of("pose_is_known", "base")],
               R=[Atom.of("hold", "gripper", "gear1")],
               poses={"base": (5.0, 5.0, 0.0)}),
        _constraints(Atom.of("can_place_on", "gear1", "base")),
    ),
    "retrieve_pose": (
        ActionInstance.of("retrieve_pose", "gear1"),
        _state(),
        _constraints(),
    ),
    "change_tool": (
        ActionInstance.of("change_tool", "gripper", "gripper"),
        _state(),
        _constraints(),
    ),
}


def test_frame_cases_cover_every_schema(domain):
    assert set(_FRAME_CASES) == set(domain.actions)


@pytest.mark.parametrize("name", sorted(_FRAME_CASES))
def test_frame_rule(name, domain):
    """diff(apply_effects) equals the declared effect set, nothing else."""
    action, state, constraints = _FRAME_CASES[name]
    schema = domain.schema(name)
    after = apply_effects(state, action, domain, constraints)
    delta = diff(state, after)
    adds = set(schema.ground_adds(action))
    deletes = set(schema.ground_deletes(action))
    assert delta["added_p"] | delta["added_r"] == adds - (set(state.P) | set(state.R))
    assert delta["removed_p"] | delta["removed_r"] == deletes
    # Untouched atoms survive: seed an unrelated fact and re-run.
    state2 = state.copy()
    bystander = Atom.of("is_placed_on", "shaft1", "base")
    state2.R.add(bystander)
    assert bystander in apply_effects(state2, action, domain, constraints).R


def test_apply_effects_checks_preconditions(domain):
    action = ActionInstance.of("pick_up", "gripper", "gear1")
    with pytest.raises(PreconditionUnsatisfied) as err:
        apply_effects(_state(), action, domain, _constraints())
    assert err.value.atom == Atom.of("is_empty", "gripper")


def test_change_tool_swaps_manipulation_capabilities(domain):
    constraints = ConstraintSet(
        {Atom.of("can_manipulate", "gripper", "gear1")},
        tool_capabilities={"vacuum": ["shaft1"]},
    )
    action = ActionInstance.of("change_tool", "gripper", "vacuum")
    before = _state()
    after = apply_effects(before, action, domain, constraints)
    assert diff(before, after) == {"added_p": set(), "removed_p": set(),
                                   "added_r": set(), "removed_r": set()}
    assert constraints.atoms == {Atom.of("can_manipulate", "vacuum", "shaft1")}


def test_diff_rejects_mismatched_object_sets():
    other = WorldState(frozenset({"x"}))
    with pytest.raises(DomainMismatch):
        diff(_state(), other)


# --- setup loading ---

def test_init_state_loads_categories(domain, initial_state):
    state, constraints = initial_state
    assert Atom.of("is_empty", "gripper") in state.P
    assert Atom.of("is_placed_on", "shaft1", "base") in state.R
    assert Atom.of("can_manipulate", "gripper", "gear1") in constraints.atoms


def test_init_state_rejects_unknown_object(domain):
    spec = {"objects": ["gripper"], "properties": [{"pred": "is_empty", "args": ["ghost"]}]}
    with pytest.raises(UnknownObject):
        init_state(spec, domain)


def test_init_state_rejects_duplicate_atom(domain):
    doc = {"pred": "is_empty", "args": ["gripper"]}
    with pytest.raises(DuplicateAtom):
        init_state({"objects": ["gripper"], "properties": [doc, doc]}, domain)


def test_init_state_rejects_category_mixup(domain):
    spec = {"objects": ["gear1", "shaft1"],
            "properties": [{"pred": "is_inserted_to", "args": ["gear1", "shaft1"]}]}
    with pytest.raises(UnknownSymbol):
        init_state(spec, domain)


# --- maintenance rules ---

_PARAMS = PerceptionParams(position_threshold=1.0, pose_threshold=1.0)


def test_rule1_refreshes_uninvolved_position(domain):
    prev = _state(positions={"gear1": (0.0, 0.0), "base": (5.0, 5.0)})
    m1 = M1Report({"gear1": (9.0, 9.0), "base": (5.0, 5.4)})
    new = update_state(prev, None, m1, M2Report({}), domain, _PARAMS)
    assert new.positions["gear1"] == (9.0, 9.0)
    # Sub-threshold jitter is not treated as motion.
    assert new.positions["base"] == (5.0, 5.0)


def test_rule1_skips_current_action_objects(domain):
    prev = _state(positions={"gear1": (0.0, 0.0)})
    m1 = M1Report({"gear1": (9.0, 9.0)})
    action = ActionInstance.of("pick_up", "gripper", "gear1")
    new = update_state(prev, action, m1, M2Report({}), domain, _PARAMS)
    assert new.positions["gear1"] == (0.0, 0.0)


def test_rule2_removes_relation_when_relative_position_changes(domain):
    rel = Atom.of("is_inserted_to", "gear1", "shaft1")
    prev = _state(R=[rel], positions={"gear1": (2.0, 2.0), "shaft1": (2.0, 2.0)})
    m1 = M1Report({"gear1": (12.0, 2.0), "shaft1": (2.0, 2.0)})
    new = update_state(prev, None, m1, M2Report({}), domain, _PARAMS)
    assert rel not in new.R


def test_rule2_keeps_relation_under_joint_motion(domain):
    # Objects moving together preserve their relative position, so the
    # relation stays even though rule 1 refreshes both positions.
    rel = Atom.of("is_inserted_to", "gear1", "shaft1")
    prev = _state(R=[rel], positions={"gear1": (2.0, 2.0), "shaft1": (2.0, 2.0)})
    m1 = M1Report({"gear1": (8.0, 7.0), "shaft1": (8.0, 7.0)})
    new = update_state(prev, None, m1, M2Report({}), domain, _PARAMS)
    assert rel in new.R
    assert new.positions["gear1"] == (8.0, 7.0)


def test_rule2_uses_previously_recorded_positions(domain):
    # Rule 2 must compare against the positions recorded before rule 1's
    # refresh; otherwise the refreshed values would mask the separation.
    rel = Atom.of("hold", "gripper", "gear1")
    prev = _state(R=[rel], positions={"gripper": (2.0, 2.0), "gear1": (2.0, 2.0)})
    m1 = M1Report({"gripper": (2.0, 2.0), "gear1": (14.0, -7.0)})
    new = update_state(prev, None, m1, M2Report({}), domain, _PARAMS)
    assert rel not in new.R


def test_rule2_hold_loss_restores_is_empty(domain):
    rel = Atom.of("hold", "gripper", "gear1")
    prev = _state(R=[rel], positions={"gripper": (0.0, 0.0), "gear1": (0.0, 0.0)})
    m1 = M1Report({"gripper": (0.0, 0.0), "gear1": (12.0, 9.0)})
    new = update_state(prev, None, m1, M2Report({}), domain, _PARAMS)
    assert rel not in new.R
    assert Atom.of("is_empty", "gripper") in new.P


def test_rule3_drops_pose_of_deviating_current_object(domain):
    known = Atom.of("pose_is_known", "gear1")
    prev = _state(P=[known], positions={"gear1": (0.0, 0.0)},
                  poses={"gear1": (0.0, 0.0, 0.0)})
    action = ActionInstance.of("pick_up", "gripper", "gear1")
    m2 = M2Report({"gear1": (14.0, -9.0, 0.0)})
    new = update_state(prev, action, M1Report({}), m2, domain, _PARAMS)
    assert known not in new.P
    assert "gear1" not in new.poses


def test_rule3_ignores_objects_outside_current_action(domain):
    known = Atom.of("pose_is_known", "gear1")
    prev = _state(P=[known], poses={"gear1": (0.0, 0.0, 0.0)})
    m2 = M2Report({"gear1": (14.0, -9.0, 0.0)})
    new = update_state(prev, ActionInstance.of("retrieve_pose", "base"),
                       M1Report({}), m2, domain, _PARAMS)
    assert known in new.P


def test_update_state_never_inserts_relations(domain):
    prev = _state(R=[Atom.of("is_placed_on", "shaft1", "base")],
                  positions={"shaft1": (0.0, 0.0), "base": (0.0, 0.0)})
    m1 = M1Report({"gear1": (1.0, 1.0), "gripper": (2.0, 2.0),
                   "shaft1": (0.0, 0.0), "base": (0.0, 0.0)})
    new = update_state(prev, None, m1, M2Report({}), domain, _PARAMS)
    assert new.R <= prev.R


@given(
    st.sets(st.sampled_from([
        Atom.of("is_inserted_to", "gear1", "shaft1"),
        Atom.of("is_placed_on", "shaft1", "base"),
        Atom.of("hold", "gripper", "gear1"),
    ])),
    st.dictionaries(st.sampled_from(sorted(OBJECTS)),
                    st.tuples(st.floats(-20, 20), st.floats(-20, 20))),
    st.dictionaries(st.sampled_from(sorted(OBJECTS)),
                    st.tuples(st.floats(-20, 20), st.floats(-20, 20))),
)
def test_update_state_r_shrinks_property(relations, prev_positions, m1_positions):
    domain = world.default_domain()
    prev = _state(R=relations, positions=prev_positions)
    new = update_state(prev, None, M1Report(m1_positions), M2Report({}),
                       domain, _PARAMS)
    assert new.R <= prev.R


def test_update_state_is_idempotent_on_stable_scene(domain):
    rel = Atom.of("is_placed_on", "shaft1", "base")
    prev = _state(R=[rel], positions={"shaft1": (1.0, 1.0), "base": (0.0, 0.0)})
    m1 = M1Report({"shaft1": (1.0, 1.0), "base": (0.0, 0.0)})
    once = update_state(prev, None, m1, M2Report({}), domain, _PARAMS)
    twice = update_state(once, None, m1, M2Report({}), domain, _PARAMS)
    assert once.P == twice.P and once.R == twice.R and once.positions == twice.positions


# --- virtual ticking ---

def _pick_unit(domain):
    action = ActionInstance.of("pick_up", "gripper", "gear1")
    schema = domain.schema("pick_up")
    return bt.make_action_unit(
        schema.ground_adds(action)[0],
        schema.ground_preconditions(action),
        action,
        node_id="u0",
    )


def test_virtual_tick_chains_effects(domain):
    state = _state(P=[Atom.of("is_empty", "gripper"), Atom.of("pose_is_known", "gear1")],
                   poses={"gear1": (0.0, 0.0, 0.0)})
    tree = bt.BehaviorTree(_pick_unit(domain))
    result = virtual_tick(tree, state, domain, _constraints())
    assert Atom.of("hold", "gripper", "gear1") in result.R
    assert Atom.of("is_empty", "gripper") not in result.P
    # The input state is untouched.
    assert Atom.of("is_empty", "gripper") in state.P


def test_virtual_tick_reports_failing_node(domain):
    tree = bt.BehaviorTree(_pick_unit(domain))
    with pytest.raises(VirtualFailure) as err:
        virtual_tick(tree, _state(), domain, _constraints())
    # A fully failed selector localizes to its leftmost leaf: the target.
    assert err.value.node_id == "u0/target"
    assert err.value.atom == Atom.of("hold", "gripper", "gear1")
