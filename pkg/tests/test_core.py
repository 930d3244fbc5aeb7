import math

import pytest

from popsim import (
    Interaction,
    Protocol,
    Splitmix64,
    apply_interaction,
    apply_interaction_inplace,
    configuration_digest,
    default_step_budget,
    leave_init,
    one_way_epidemic,
    output_vector,
    pairwise_elimination,
    parallel_time,
    run_trial,
    sample_interaction,
)
from popsim.influence import ScheduleRecorder

# 0.999 quantile of the chi-square distribution with 55 degrees of freedom
# (8 agents -> 56 ordered pairs).
CHI2_CRIT_DF55_P999 = 93.16753277222854


def identity_protocol(num_states=2):
    table = tuple(tuple((a, b) for b in range(num_states)) for a in range(num_states))
    return Protocol(num_states, 0, table, ("F",) * num_states, name="identity")


# ---------------------------------------------------------------- protocol type


def test_protocol_rejects_partial_table():
    with pytest.raises(ValueError):
        Protocol(2, 0, (((0, 0),),), ("F", "F"))


def test_protocol_rejects_out_of_range_entries():
    table = (((0, 2), (0, 1)), ((1, 0), (1, 1)))
    with pytest.raises(ValueError):
        Protocol(2, 0, table, ("F", "F"))


def test_protocol_rejects_bad_initial_state():
    table = (((0, 0),),)
    with pytest.raises(ValueError):
        Protocol(1, 1, table, ("F",))


def test_protocol_rejects_partial_outputs():
    table = (((0, 0), (0, 1)), ((1, 0), (1, 1)))
    with pytest.raises(ValueError):
        Protocol(2, 0, table, ("F",))


# ------------------------------------------------------------ apply_interaction


def test_apply_pairwise_elimination_demotes_responder():
    proto = pairwise_elimination(3)
    assert apply_interaction(proto, [0, 0, 1], Interaction(0, 1)) == [0, 1, 1]


def test_apply_identity_changes_nothing():
    proto = identity_protocol()
    config = [0, 1, 0, 1]
    assert apply_interaction(proto, config, Interaction(2, 1)) == config


def test_apply_epidemic_infects_responder():
    proto = one_way_epidemic(4)
    assert apply_interaction(proto, [1, 0, 0, 0], Interaction(0, 3)) == [1, 0, 0, 1]


def test_apply_is_pure():
    proto = pairwise_elimination(3)
    config = [0, 0, 1]
    apply_interaction(proto, config, Interaction(0, 1))
    assert config == [0, 0, 1]


def test_apply_inplace_mutates():
    proto = pairwise_elimination(3)
    config = [0, 0, 1]
    apply_interaction_inplace(proto, config, Interaction(0, 1))
    assert config == [0, 1, 1]


def test_apply_changes_at_most_two_entries():
    proto = one_way_epidemic(6)
    rng = Splitmix64(3)
    config = [rng.randbelow(2) for _ in range(6)]
    for _ in range(200):
        e = sample_interaction(rng, 6)
        after = apply_interaction(proto, config, e)
        changed = [i for i in range(6) if after[i] != config[i]]
        assert set(changed) <= {e.initiator, e.responder}
        config = after


def test_apply_rejects_bad_indices():
    proto = pairwise_elimination(3)
    with pytest.raises(ValueError):
        apply_interaction(proto, [0, 0, 0], Interaction(0, 3))
    with pytest.raises(ValueError):
        apply_interaction(proto, [0, 0, 0], Interaction(1, 1))


# ----------------------------------------------------------- sample_interaction


def test_sample_two_agents_is_fair_coin():
    rng = Splitmix64(17)
    seen = {sample_interaction(rng, 2) for _ in range(100)}
    assert seen == {Interaction(0, 1), Interaction(1, 0)}


def test_sample_rejects_tiny_population():
    with pytest.raises(ValueError):
        sample_interaction(Splitmix64(0), 1)


def test_sample_deterministic_per_seed():
    rng1, rng2 = Splitmix64(5), Splitmix64(5)
    seq1 = [sample_interaction(rng1, 5) for _ in range(100)]
    seq2 = [sample_interaction(rng2, 5) for _ in range(100)]
    assert seq1 == seq2


def test_sample_uniform_over_ordered_pairs():
    # chi-square over the 56 ordered pairs at n=8, plus a 5-sigma band on
    # every single pair's frequency.
    n = 8
    draws = 1_000_000
    rng = Splitmix64(2024)
    counts = {}
    for _ in range(draws):
        e = sample_interaction(rng, n)
        counts[e] = counts.get(e, 0) + 1
    assert len(counts) == n * (n - 1)
    expected = draws / (n * (n - 1))
    chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
    assert chi2 < CHI2_CRIT_DF55_P999
    p = 1 / (n * (n - 1))
    sigma = math.sqrt(p * (1 - p) / draws)
    for c in counts.values():
        assert abs(c / draws - p) < 5 * sigma


# ------------------------------------------------------------------- run_trial


def test_two_leaders_resolve_in_one_step():
    proto = pairwise_elimination(2)
    rec = run_trial(proto, 2, seed=1, stop_event=("stabilized", lambda t: t.counts[0] == 1))
    assert rec.steps_taken == 1
    assert rec.event_steps == {"stabilized": 1}
    assert not rec.truncated


def test_zero_step_budget_keeps_initial_configuration():
    proto = pairwise_elimination(5)
    rec = run_trial(proto, 5, seed=9, max_steps=0)
    assert rec.steps_taken == 0
    assert rec.final_digest == configuration_digest([0] * 5)
    assert not rec.truncated  # no predicate was set, so nothing was cut short


def test_budget_exhaustion_marks_truncated():
    proto = identity_protocol()
    rec = run_trial(proto, 4, seed=9, max_steps=10, stop=lambda t: False)
    assert rec.steps_taken == 10
    assert rec.truncated


def test_predicate_checked_before_first_step():
    proto = pairwise_elimination(4)
    rec = run_trial(proto, 4, seed=9, stop_event=("done", lambda t: t.counts[0] == 4))
    assert rec.steps_taken == 0
    assert rec.event_steps == {"done": 0}


def test_runs_are_deterministic():
    proto = leave_init(6)
    rec_a = run_trial(proto, 6, seed=77, max_steps=50)
    rec_b = run_trial(proto, 6, seed=77, max_steps=50)
    assert rec_a == rec_b

    log_a, log_b = ScheduleRecorder(6), ScheduleRecorder(6)
    run_trial(proto, 6, seed=77, max_steps=50, observers=[log_a])
    run_trial(proto, 6, seed=77, max_steps=50, observers=[log_b])
    assert log_a.log.entries == log_b.log.entries


def test_engine_draws_match_sample_interaction():
    # The engine inlines the sampling arithmetic; replaying sample_interaction
    # on the same seed must give the identical schedule.
    proto = leave_init(5)
    recorder = ScheduleRecorder(5)
    run_trial(proto, 5, seed=31, max_steps=40, observers=[recorder])
    rng = Splitmix64(31)
    replay = [sample_interaction(rng, 5) for _ in range(40)]
    assert recorder.log.entries == replay


def test_observer_sees_old_and_new_states():
    proto = pairwise_elimination(2)
    seen = []

    class Probe:
        def notify(self, trial, e, old, new):
            seen.append((trial.step, e, old, new))

    run_trial(proto, 2, seed=3, max_steps=1, observers=[Probe()])
    assert len(seen) == 1
    step, e, old, new = seen[0]
    assert step == 1
    assert old == (0, 0)
    assert new == (0, 1)


def test_counts_track_configuration():
    proto = leave_init(8)
    final_counts = {}

    class Probe:
        def notify(self, trial, e, old, new):
            final_counts["counts"] = list(trial.counts)
            final_counts["states"] = list(trial.states)

    run_trial(proto, 8, seed=13, max_steps=20, observers=[Probe()])
    states = final_counts["states"]
    assert final_counts["counts"] == [states.count(0), states.count(1)]


def test_initial_override():
    proto = one_way_epidemic(4)
    rec = run_trial(proto, 4, seed=2, max_steps=0, initial=[1, 0, 0, 0])
    assert rec.final_digest == configuration_digest([1, 0, 0, 0])
    with pytest.raises(ValueError):
        run_trial(proto, 4, seed=2, initial=[1, 0, 0])
    with pytest.raises(ValueError):
        run_trial(proto, 4, seed=2, initial=[2, 0, 0, 0])


def test_run_trial_rejects_tiny_population():
    with pytest.raises(ValueError):
        run_trial(pairwise_elimination(1), 1, seed=0)


def test_mean_stabilization_steps_near_exact_value():
    # exact expected value for three agents is 4 (solved in test_exact)
    proto = pairwise_elimination(3)
    total = 0
    trials = 20_000
    for t in range(trials):
        rec = run_trial(proto, 3, seed=t, stop_event=("stabilized", lambda tr: tr.counts[0] == 1))
        total += rec.steps_taken
    assert total / trials == pytest.approx(4.0, rel=0.03)


# -------------------------------------------------------------------- the rest


def test_output_vector_maps_elementwise():
    proto = pairwise_elimination(2)
    assert output_vector(proto, [0, 1]) == ["L", "F"]
    assert output_vector(proto, [1, 1, 1]) == ["F", "F", "F"]


def test_all_initial_configuration_outputs_follower_for_leave_init():
    proto = leave_init(4)
    assert output_vector(proto, [proto.initial_state] * 4) == ["F"] * 4


def test_output_vector_constant_map():
    proto = leave_init(3)
    for config in ([0, 0, 0], [1, 0, 1], [1, 1, 1]):
        assert output_vector(proto, config) == ["F", "F", "F"]


def test_parallel_time():
    assert parallel_time(0, 5) == 0.0
    assert parallel_time(4, 3) == pytest.approx(4 / 3)
    n = 100
    steps = round(n * math.log(n))
    assert parallel_time(steps, n) == pytest.approx(math.log(n), rel=0.01)
    with pytest.raises(ValueError):
        parallel_time(1, 0)


def test_default_step_budget():
    assert default_step_budget(2) == 64 * 2 * 1
    assert default_step_budget(100) == 64 * 100 * 5


def test_digest_stable_and_distinct():
    assert configuration_digest([0, 1]) == configuration_digest([0, 1])
    assert configuration_digest([0, 1]) != configuration_digest([1, 0])
