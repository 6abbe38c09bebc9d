import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cotriage.errors import DuplicateId, ParseError
from cotriage.voting import (
    ABSTAIN,
    SampledPath,
    confidence_weighted_vote,
    dynamic_vote,
    majority_vote,
    read_paths,
    run_method,
    write_paths,
)


def mk_path(i, answer, cost=100, conf=0.5, qid="q0"):
    return SampledPath(qid, i, answer, cost, conf)


def test_majority_basic():
    assert majority_vote([0, 1, 1, 2]) == 1
    assert majority_vote([3]) == 3


def test_majority_tie_breaks_on_confidence_then_index():
    # counts tie 2-2; summed confidence favors answer 2
    assert majority_vote([2, 2, 0, 0], [0.9, 0.9, 0.1, 0.1]) == 2
    # everything ties; lowest index wins
    assert majority_vote([5, 3], [0.5, 0.5]) == 3
    assert majority_vote([5, 3]) == 3


def test_abstains_excluded_from_tallies():
    assert majority_vote([ABSTAIN, ABSTAIN, 1]) == 1
    assert majority_vote([ABSTAIN, ABSTAIN]) == ABSTAIN
    assert confidence_weighted_vote([ABSTAIN], [0.9]) == ABSTAIN


def test_confidence_weighted_vote():
    # one high-confidence vote beats two low-confidence ones
    assert confidence_weighted_vote([0, 1, 1], [0.9, 0.3, 0.3]) == 0
    assert confidence_weighted_vote([0, 1, 1], [0.9, 0.4, 0.6]) == 1
    assert confidence_weighted_vote([0, 1], [0.5, 0.5]) == 0  # tie -> lowest index
    with pytest.raises(ValueError):
        confidence_weighted_vote([0, 1], [0.5])


def test_dynamic_vote_stops_at_consensus():
    paths = [mk_path(i, 2, cost=10) for i in range(10)]
    res = dynamic_vote(paths, budget=10, votes_needed=6)
    assert res.answer == 2
    assert res.paths_used == 6
    assert res.tokens_used == 60
    assert res.stopped_early


def test_dynamic_vote_falls_back_to_weighted_vote():
    paths = [
        mk_path(0, 0, cost=10, conf=0.2),
        mk_path(1, 1, cost=10, conf=0.9),
        mk_path(2, 2, cost=10, conf=0.3),
    ]
    res = dynamic_vote(paths, budget=3, votes_needed=2)
    assert res.answer == 1
    assert res.paths_used == 3
    assert res.tokens_used == 30
    assert not res.stopped_early


def test_dynamic_vote_counts_abstain_tokens():
    paths = [mk_path(0, ABSTAIN, cost=50), mk_path(1, 1, cost=10), mk_path(2, 1, cost=10)]
    res = dynamic_vote(paths, budget=3, votes_needed=2)
    assert res.answer == 1
    assert res.tokens_used == 70
    assert res.stopped_early


def test_dynamic_vote_default_needs_majority_of_budget():
    paths = [mk_path(i, 1, cost=1) for i in range(10)]
    res = dynamic_vote(paths, budget=10)
    assert res.paths_used == 6  # 10 // 2 + 1


def test_run_method_token_accounting():
    paths = [mk_path(i, i % 2, cost=100 + i) for i in range(12)]
    sc = run_method(paths, "sc", budget=10)
    assert sc.paths_used == 10
    assert sc.tokens_used == sum(100 + i for i in range(10))
    cer = run_method(paths, "cer", budget=10)
    assert cer.tokens_used == sc.tokens_used
    with pytest.raises(ValueError):
        run_method(paths, "vote-twice")


def test_extra_vote_changes_tally_not_tokens():
    paths = [mk_path(0, 0, cost=10, conf=0.6), mk_path(1, 1, cost=10, conf=0.5)]
    base = run_method(paths, "sc", budget=2)
    boosted = run_method(paths, "sc", budget=2, extra_vote=(1, 0.9))
    assert base.answer == 0
    assert boosted.answer == 1
    assert boosted.tokens_used == base.tokens_used
    with pytest.raises(ValueError):
        run_method(paths, "dv", extra_vote=(1, 0.9))


_streams = st.lists(
    st.tuples(
        st.integers(min_value=-1, max_value=3),
        st.integers(min_value=0, max_value=500),
        st.floats(min_value=0.01, max_value=1.0),
    ),
    min_size=1,
    max_size=12,
)


@given(_streams, st.integers(min_value=1, max_value=12))
@settings(max_examples=300)
def test_vote_invariants(stream, budget):
    paths = [mk_path(i, a, cost=c, conf=f) for i, (a, c, f) in enumerate(stream)]
    window = paths[:budget]
    cast = {p.answer for p in window if p.answer != ABSTAIN}

    for method in ("sc", "cer"):
        res = run_method(paths, method, budget=budget)
        assert res.paths_used == len(window)
        assert res.tokens_used == sum(p.token_cost for p in window)
        if cast:
            assert res.answer in cast
        else:
            assert res.answer == ABSTAIN

    dv = dynamic_vote(paths, budget=budget)
    assert dv.paths_used <= min(budget, len(paths))
    assert dv.tokens_used <= sum(p.token_cost for p in window)
    if cast:
        assert dv.answer in cast
    else:
        assert dv.answer == ABSTAIN
    if dv.stopped_early:
        needed = budget // 2 + 1
        votes = [p.answer for p in window[: dv.paths_used]]
        assert votes.count(dv.answer) == needed


@given(_streams, st.randoms(use_true_random=False))
@settings(max_examples=200)
def test_set_methods_are_order_invariant(stream, rnd):
    paths = [mk_path(i, a, cost=c, conf=f) for i, (a, c, f) in enumerate(stream)]
    shuffled = list(paths)
    rnd.shuffle(shuffled)
    budget = len(paths)
    for method in ("sc", "cer"):
        a = run_method(paths, method, budget=budget)
        b = run_method(shuffled, method, budget=budget)
        assert a.answer == b.answer
        assert a.tokens_used == b.tokens_used


@given(_streams)
@settings(max_examples=200)
def test_uniform_confidence_makes_cer_match_sc(stream):
    answers = [a for a, _, _ in stream]
    conf = [0.37] * len(answers)
    assert confidence_weighted_vote(answers, conf) == majority_vote(answers, conf)


def test_path_validation():
    with pytest.raises(ValueError):
        mk_path(0, -2).validate()
    with pytest.raises(ValueError):
        mk_path(0, 0, conf=0.0).validate()
    with pytest.raises(ValueError):
        mk_path(0, 0, conf=1.5).validate()
    with pytest.raises(ValueError):
        mk_path(0, 0, cost=-1).validate()
    mk_path(0, ABSTAIN, conf=1.0).validate()


def test_paths_roundtrip(tmp_path):
    paths = [mk_path(i, i % 3 - 1, cost=10 * i + 5, conf=0.1 + 0.05 * i, qid=f"q{i % 2}") for i in range(8)]
    file = tmp_path / "paths.jsonl"
    write_paths(file, paths)
    grouped = read_paths(file)
    assert set(grouped) == {"q0", "q1"}
    assert [p.sample_idx for p in grouped["q0"]] == [0, 2, 4, 6]
    assert grouped["q1"][0].temperature == 1.0
    assert grouped["q0"][1].token_cost == 25


def test_paths_reject_duplicates(tmp_path):
    file = tmp_path / "paths.jsonl"
    write_paths(file, [mk_path(0, 1), mk_path(0, 2)])
    with pytest.raises(DuplicateId):
        read_paths(file)


def test_paths_reject_bad_records(tmp_path):
    file = tmp_path / "paths.jsonl"
    file.write_text('{"schema": "paths/1"}\n{"question_id": "q0", "sample_idx": 0}\n')
    with pytest.raises(ParseError) as err:
        read_paths(file)
    assert err.value.line == 2
