import itertools

import numpy as np
import pytest

from cotriage.calibration import CalibrationItem
from cotriage.errors import AlignmentError, DuplicateId, EmptyDataset, IoError
from cotriage.evaluation import (
    OutcomeVector,
    build_calibration_items,
    paired_bootstrap,
    route_outcomes,
    summarize,
    write_report,
)
from cotriage.trajectory import (
    McQuestion,
    SentenceRecord,
    Trajectory,
    normalize_choices,
    sentence_signals,
)
from cotriage.voting import SampledPath


def vec(ids, correct, tokens):
    return OutcomeVector(list(ids), np.array(correct, dtype=bool), np.array(tokens))


def test_summarize_quartiles():
    s = summarize(vec(["a", "b", "c", "d"], [1, 0, 1, 1], [1, 2, 3, 4]))
    assert s.accuracy == 0.75
    assert s.mean_tokens == 2.5
    assert (s.tokens_q1, s.tokens_median, s.tokens_q3) == (1.75, 2.5, 3.25)
    with pytest.raises(EmptyDataset):
        summarize(vec([], [], []))


def test_outcome_vector_rejects_duplicates():
    with pytest.raises(DuplicateId):
        vec(["a", "a"], [1, 0], [1, 2])


def test_identical_vectors_give_p_one():
    ids = [f"q{i}" for i in range(50)]
    rng = np.random.default_rng(0)
    correct = rng.integers(0, 2, 50)
    tokens = rng.integers(100, 500, 50)
    a = vec(ids, correct, tokens)
    b = vec(ids, correct.copy(), tokens.copy())
    res = paired_bootstrap(a, b, resamples=500, seed=1)
    assert res.delta_accuracy == 0.0
    assert res.delta_tokens == 0.0
    assert res.p_accuracy == 1.0
    assert res.p_tokens == 1.0


def test_consistent_dominance_is_significant():
    ids = [f"q{i}" for i in range(100)]
    a = vec(ids, [True] * 100, [100] * 100)
    b = vec(ids, [False] * 100, [200] * 100)
    res = paired_bootstrap(a, b, resamples=2000, seed=2)
    assert res.p_accuracy < 0.05
    assert res.p_tokens < 0.05
    assert res.delta_accuracy == 1.0
    assert res.delta_tokens == -100.0


def test_swap_symmetry():
    ids = [f"q{i}" for i in range(40)]
    rng = np.random.default_rng(3)
    a = vec(ids, rng.integers(0, 2, 40), rng.integers(50, 400, 40))
    b = vec(ids, rng.integers(0, 2, 40), rng.integers(50, 400, 40))
    ab = paired_bootstrap(a, b, resamples=400, seed=4)
    ba = paired_bootstrap(b, a, resamples=400, seed=4)
    assert ab.p_accuracy == ba.p_accuracy
    assert ab.p_tokens == ba.p_tokens
    assert ab.delta_accuracy == -ba.delta_accuracy
    assert ab.delta_tokens == -ba.delta_tokens


def test_order_of_b_does_not_matter():
    ids = ["a", "b", "c", "d"]
    a = vec(ids, [1, 0, 1, 0], [10, 20, 30, 40])
    b1 = vec(ids, [0, 0, 1, 1], [40, 30, 20, 10])
    b2 = vec(["d", "c", "b", "a"], [1, 1, 0, 0], [10, 20, 30, 40])
    r1 = paired_bootstrap(a, b1, resamples=100, seed=5)
    r2 = paired_bootstrap(a, b2, resamples=100, seed=5)
    assert r1 == r2


def test_mismatched_question_sets_rejected():
    a = vec(["a", "b"], [1, 0], [1, 2])
    b = vec(["a", "c"], [1, 0], [1, 2])
    with pytest.raises(AlignmentError):
        paired_bootstrap(a, b)


def _exhaustive_p(a_vals, b_vals):
    a_vals = np.asarray(a_vals, dtype=np.float64)
    b_vals = np.asarray(b_vals, dtype=np.float64)
    obs = a_vals.mean() - b_vals.mean()
    if obs == 0.0:
        return 1.0
    flips = 0
    total = 0
    for combo in itertools.product(range(3), repeat=3):
        idx = np.array(combo)
        d = a_vals[idx].mean() - b_vals[idx].mean()
        flips += np.sign(d) != np.sign(obs)
        total += 1
    return min(1.0, 2.0 * flips / total)


def test_sampled_bootstrap_matches_exhaustive_oracle_n3():
    ids = ["a", "b", "c"]
    a = vec(ids, [1, 1, 0], [100, 300, 200])
    b = vec(ids, [0, 1, 0], [150, 250, 400])
    res = paired_bootstrap(a, b, resamples=2000, seed=6)
    p_acc = _exhaustive_p(a.correct, b.correct)
    p_tok = _exhaustive_p(a.tokens, b.tokens)
    assert abs(res.p_accuracy - p_acc) < 0.05
    assert abs(res.p_tokens - p_tok) < 0.05


def test_percentile_variant():
    ids = [f"q{i}" for i in range(30)]
    rng = np.random.default_rng(7)
    correct = rng.integers(0, 2, 30)
    a = vec(ids, correct, rng.integers(50, 400, 30))
    b = vec(ids, correct.copy(), rng.integers(50, 400, 30))
    res = paired_bootstrap(a, b, resamples=300, seed=8, method="percentile")
    assert res.p_accuracy == 1.0
    assert 0.0 <= res.p_tokens <= 1.0
    with pytest.raises(ValueError):
        paired_bootstrap(a, b, method="median")


def _items(n, rng):
    return [
        CalibrationItem(
            question_id=f"q{i}",
            score=float(rng.uniform(0, 1)),
            greedy_correct=bool(rng.integers(0, 2)),
            greedy_tokens=int(rng.integers(50, 400)),
            multi_correct=bool(rng.integers(0, 2)),
            multi_tokens=int(rng.integers(500, 4000)),
        )
        for i in range(n)
    ]


def test_route_outcomes_boundaries():
    items = _items(500, np.random.default_rng(9))
    outs = route_outcomes(items, 0.0)
    np.testing.assert_array_equal(outs["policy"].correct, outs["greedy"].correct)
    np.testing.assert_array_equal(outs["policy"].tokens, outs["greedy"].tokens)

    above = max(it.score for it in items) + 1e-9
    outs = route_outcomes(items, above)
    np.testing.assert_array_equal(outs["policy"].correct, outs["multi"].correct)
    np.testing.assert_array_equal(
        outs["policy"].tokens, outs["multi"].tokens + outs["greedy"].tokens
    )

    outs = route_outcomes(items, above, sunk_greedy=False)
    np.testing.assert_array_equal(outs["policy"].tokens, outs["multi"].tokens)


def _tiny_traj(qid, answer, final_p=0.8, k=4):
    probs = np.full(k, (1.0 - final_p) / (k - 1))
    probs[answer] = final_p
    dist = normalize_choices(np.log(probs))
    p, h = sentence_signals(dist)
    rec = SentenceRecord("Only one step here.", dist, p, h, 4)
    return Trajectory(qid, [rec], greedy_answer=answer, greedy_token_cost=100, label=None)


def test_build_calibration_items_joins_everything():
    questions = {
        "q0": McQuestion("q0", "?", ["a", "b", "c", "d"], gold_idx=1),
        "q1": McQuestion("q1", "?", ["a", "b", "c", "d"], gold_idx=0),
    }
    trajs = [_tiny_traj("q0", answer=1), _tiny_traj("q1", answer=2)]
    paths = {
        "q0": [SampledPath("q0", i, 3, 50, 0.9) for i in range(3)],
        "q1": [SampledPath("q1", i, 0, 60, 0.9) for i in range(3)],
    }
    items = build_calibration_items(trajs, [0.9, 0.2], paths, questions, method="sc", budget=3)
    assert items[0].greedy_correct and not items[0].multi_correct
    assert not items[1].greedy_correct and items[1].multi_correct
    assert items[0].greedy_tokens == 100
    assert items[0].multi_tokens == 150
    assert items[1].multi_tokens == 180
    assert items[0].score == 0.9


def test_build_calibration_items_greedy_vote_flag():
    questions = {"q0": McQuestion("q0", "?", ["a", "b"], gold_idx=0)}
    trajs = [_tiny_traj("q0", answer=0, k=2, final_p=0.99)]
    # one sampled vote for answer 1; greedy's extra vote for 0 wins the tie
    # on confidence (0.99 vs 0.5)
    paths = {"q0": [SampledPath("q0", 0, 1, 50, 0.5)]}
    plain = build_calibration_items(trajs, [0.5], paths, questions, budget=1)
    boosted = build_calibration_items(
        trajs, [0.5], paths, questions, budget=1, include_greedy_vote=True
    )
    assert not plain[0].multi_correct
    assert boosted[0].multi_correct
    assert boosted[0].multi_tokens == plain[0].multi_tokens


def test_build_calibration_items_alignment_errors():
    questions = {"q0": McQuestion("q0", "?", ["a", "b"], gold_idx=None)}
    trajs = [_tiny_traj("q0", answer=0, k=2)]
    paths = {"q0": [SampledPath("q0", 0, 0, 50, 0.5)]}
    with pytest.raises(AlignmentError):  # no gold answer
        build_calibration_items(trajs, [0.5], paths, questions)
    with pytest.raises(AlignmentError):  # score count mismatch
        build_calibration_items(trajs, [], paths, questions)
    with pytest.raises(AlignmentError):  # unknown question
        build_calibration_items(trajs, [0.5], paths, {})
    q_ok = {"q0": McQuestion("q0", "?", ["a", "b"], gold_idx=0)}
    with pytest.raises(AlignmentError):  # missing paths
        build_calibration_items(trajs, [0.5], {}, q_ok)


def test_write_report_files(tmp_path):
    items = _items(60, np.random.default_rng(10))
    methods = route_outcomes(items, 0.5)
    written = write_report(methods, tmp_path / "report", seed=11, resamples=200)
    names = {p.name for p in written}
    assert names == {"summary.csv", "significance.csv", "outcomes.csv"}
    for p in written:
        first = p.read_text().splitlines()[0]
        assert first == "# schema=report/1 seed=11"
    sig = (tmp_path / "report" / "significance.csv").read_text().splitlines()
    assert len(sig) == 2 + 3  # comment, header, 3 method pairs
    out = (tmp_path / "report" / "outcomes.csv").read_text().splitlines()
    assert len(out) == 2 + 3 * 60


def test_write_report_unwritable_dir(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory")
    items = _items(5, np.random.default_rng(11))
    with pytest.raises(IoError):
        write_report(route_outcomes(items, 0.5), blocker / "sub", seed=0, resamples=10)
