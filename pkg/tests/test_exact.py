from fractions import Fraction

import pytest

from popsim import (
    LEADER,
    Protocol,
    leave_init,
    output_vector,
    pairwise_elimination,
)
from popsim.exact import (
    BudgetExceededError,
    NonAbsorbingError,
    closed_form_pairwise,
    enumerate_reachable,
    expected_hitting_steps,
    expected_hitting_steps_float,
    is_safe,
    random_walk_outputs_stable,
    replay_path,
    safe_indices,
    safety_verdicts,
)


def identity_protocol(num_states=3):
    table = tuple(tuple((a, b) for b in range(num_states)) for a in range(num_states))
    return Protocol(num_states, 0, table, ("F",) * num_states, name="identity")


def leader_swap_protocol():
    """A circulating leader token: per-agent outputs churn forever.

    Two fresh agents mint a (token, plain) pair; a token initiator then swaps
    roles with a plain responder.  Along swap paths the output multiset is
    frozen at one L, so a multiset-based safety check would be fooled; the
    per-agent check must reject every configuration.
    """
    # states: 0 = fresh (F, initial), 1 = token (L), 2 = plain (F)
    table = [[(a, b) for b in range(3)] for a in range(3)]
    table[0][0] = (1, 2)
    table[1][2] = (2, 1)
    return Protocol(3, 0, tuple(map(tuple, table)), ("F", LEADER, "F"), name="leader-swap")


def leader_decay_protocol():
    """Pairwise elimination plus abdication: (L, F) -> (F, F).

    One-leader configurations stay reachable but are not stable, so they must
    come back unsafe with an output-change witness path.
    """
    table = [[(0, 1), (1, 1)], [(1, 0), (1, 1)]]
    return Protocol(2, 0, tuple(tuple(r) for r in table), (LEADER, "F"), name="leader-decay")


# ----------------------------------------------------------------- enumeration


def test_pairwise_two_agents_reachable_set():
    space = enumerate_reachable(pairwise_elimination(2), 2)
    assert sorted(space.configs) == [(0, 0), (0, 1), (1, 0)]
    assert space.configs[space.initial_index] == (0, 0)


def test_leave_init_two_agents_reachable_set():
    space = enumerate_reachable(leave_init(2), 2)
    assert sorted(space.configs) == [(0, 0), (1, 1)]


def test_identity_protocol_single_configuration():
    space = enumerate_reachable(identity_protocol(), 4)
    assert len(space) == 1
    assert space.successors[0] == {0: 12}  # all n(n-1) interactions loop


def test_successor_multiset_counts_sum_to_pair_count():
    space = enumerate_reachable(pairwise_elimination(4), 4)
    for succ in space.successors:
        assert sum(succ.values()) == 12


def test_budget_error_names_the_size():
    with pytest.raises(BudgetExceededError, match=r"3\^16"):
        enumerate_reachable(identity_protocol(3), 16, budget=10**6)


def test_budget_can_be_raised():
    space = enumerate_reachable(identity_protocol(3), 16, budget=3**16)
    assert len(space) == 1


# ---------------------------------------------------------------------- safety


def test_pairwise_three_agents_safety_classification():
    proto = pairwise_elimination(3)
    space = enumerate_reachable(proto, 3)
    assert len(space) == 7
    verdicts = {v.config: v for v in safety_verdicts(space)}
    one_leader = [(0, 1, 1), (1, 0, 1), (1, 1, 0)]
    for config in one_leader:
        assert verdicts[config].safe
    for config, verdict in verdicts.items():
        if config not in one_leader:
            assert not verdict.safe
            assert verdict.leader_count in (2, 3)
            assert "leader count" in verdict.reason


def test_all_initial_is_unsafe_when_initial_outputs_follower():
    proto = leave_init(3)
    space = enumerate_reachable(proto, 3)
    verdict = is_safe(space, (0, 0, 0))
    assert not verdict.safe
    assert verdict.leader_count == 0


def test_leader_swap_is_never_safe_despite_stable_multiset():
    proto = leader_swap_protocol()
    space = enumerate_reachable(proto, 3)
    verdicts = safety_verdicts(space)
    assert not any(v.safe for v in verdicts)
    one_leader = [v for v in verdicts if v.leader_count == 1]
    assert one_leader  # the minted-token configurations
    for verdict in one_leader:
        assert verdict.witness_agent is not None
        landed = replay_path(proto, verdict.config, verdict.witness_path)
        assert landed == verdict.witness_config
        before = output_vector(proto, verdict.config)
        after = output_vector(proto, landed)
        # the multiset never budges along the witness path, yet some agent's
        # own output flips: exactly the case a multiset check would miss
        assert sorted(before) == sorted(after)
        assert before[verdict.witness_agent] != after[verdict.witness_agent]


def test_witness_paths_replay_to_an_output_change():
    proto = leader_decay_protocol()
    space = enumerate_reachable(proto, 3)
    unsafe_with_path = [v for v in safety_verdicts(space) if v.witness_path is not None]
    assert unsafe_with_path
    for verdict in unsafe_with_path:
        landed = replay_path(proto, verdict.config, verdict.witness_path)
        assert (
            output_vector(proto, landed)[verdict.witness_agent]
            != output_vector(proto, verdict.config)[verdict.witness_agent]
        )


def test_safe_configurations_survive_random_walks():
    proto = pairwise_elimination(4)
    space = enumerate_reachable(proto, 4)
    for i in safe_indices(space):
        assert random_walk_outputs_stable(space, space.configs[i], steps=1000, seed=9 + i)


def test_is_safe_requires_membership():
    space = enumerate_reachable(pairwise_elimination(2), 2)
    with pytest.raises(ValueError):
        is_safe(space, (1, 1))


# ---------------------------------------------------------------- hitting times


def test_pairwise_two_agents_one_step():
    space = enumerate_reachable(pairwise_elimination(2), 2)
    safe = safe_indices(space)
    steps = expected_hitting_steps(space, lambda c: space.index[c] in safe)
    assert steps == Fraction(1)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_pairwise_matches_square_closed_form(n):
    space = enumerate_reachable(pairwise_elimination(n), n)
    safe = safe_indices(space)
    steps = expected_hitting_steps(space, lambda c: space.index[c] in safe)
    assert steps == Fraction((n - 1) ** 2)
    assert closed_form_pairwise(n) == float(steps)


def test_leave_init_drain_time_matches_count_chain():
    # independent oracle: the init-count process is itself a Markov chain;
    # solve it by hand with first-step analysis over counts
    n = 3
    space = enumerate_reachable(leave_init(n), n)
    solver = expected_hitting_steps(space, lambda c: c.count(0) == 0)

    def count_chain(n):
        # E[steps] from i agents in init until none remain
        total = n * (n - 1)
        expect = {0: Fraction(0)}
        for i in range(1, n + 1):
            p_two = Fraction(i * (i - 1), total)
            p_one = Fraction(2 * i * (n - i), total)
            move = p_two + p_one
            prev2 = expect.get(i - 2, Fraction(0))
            expect[i] = (1 + p_two * prev2 + p_one * expect[i - 1]) / move
        return expect[n]

    assert solver == count_chain(n) == Fraction(5, 2)


def test_unreachable_target_raises():
    space = enumerate_reachable(pairwise_elimination(3), 3)
    with pytest.raises(NonAbsorbingError):
        expected_hitting_steps(space, lambda c: output_vector(space.protocol, c).count(LEADER) == 0)


def test_empty_target_raises():
    space = enumerate_reachable(leave_init(2), 2)
    with pytest.raises(NonAbsorbingError, match="empty"):
        expected_hitting_steps(space, lambda c: False)


def test_target_at_start_is_zero():
    space = enumerate_reachable(leave_init(2), 2)
    assert expected_hitting_steps(space, lambda c: True) == 0


def test_float_solver_agrees_with_exact():
    for n in (3, 4, 5):
        space = enumerate_reachable(pairwise_elimination(n), n)
        safe = safe_indices(space)
        exact_value = expected_hitting_steps(space, lambda c: space.index[c] in safe)
        value, residual = expected_hitting_steps_float(space, lambda c: space.index[c] in safe)
        assert value == pytest.approx(float(exact_value), rel=1e-12)
        assert residual < 1e-9


def test_closed_form_examples():
    assert closed_form_pairwise(2) == 1.0
    assert closed_form_pairwise(3) == 4.0
    assert closed_form_pairwise(10) == 81.0
    with pytest.raises(ValueError):
        closed_form_pairwise(1)
