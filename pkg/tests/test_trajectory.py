import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cotriage.errors import (
    DuplicateId,
    EmptyTrajectory,
    InvalidAnswerTokens,
    NonFiniteScore,
    ParseError,
)
from cotriage.trajectory import (
    ChoiceDistribution,
    McQuestion,
    SentenceRecord,
    Trajectory,
    answer_logscore,
    load_questions,
    normalize_choices,
    prefix_lengths,
    read_trajectories,
    segment_sentences,
    sentence_signals,
    write_questions,
    write_trajectories,
)

DATA = Path(__file__).parent / "data"

with open(DATA / "segmentation_cases.json") as fh:
    SEGMENTATION_CASES = json.load(fh)


@pytest.mark.parametrize(
    "case", SEGMENTATION_CASES, ids=[c["text"][:30] for c in SEGMENTATION_CASES]
)
def test_segmentation_regression_corpus(case):
    assert segment_sentences(case["text"]) == case["expected"]


@pytest.mark.parametrize("text", ["", "   ", "\n\n", " \t \n "])
def test_segmentation_rejects_empty_text(text):
    with pytest.raises(EmptyTrajectory):
        segment_sentences(text)


_text_alphabet = st.sampled_from(list("abcXYz 123.?!\n:,"))
_texts = st.text(alphabet=_text_alphabet, min_size=1, max_size=120)


@given(_texts)
@settings(max_examples=300)
def test_segmentation_idempotent(text):
    try:
        sentences = segment_sentences(text)
    except EmptyTrajectory:
        return
    for s in sentences:
        assert segment_sentences(s) == [s]


@given(_texts)
@settings(max_examples=300)
def test_segmentation_preserves_non_whitespace(text):
    try:
        sentences = segment_sentences(text)
    except EmptyTrajectory:
        assert not text.strip()
        return
    assert all(s == s.strip() and s for s in sentences)
    joined = "".join("".join(s.split()) for s in sentences)
    assert joined == "".join(text.split())


def test_normalize_choices_worked_example():
    dist = normalize_choices([0.0, -math.log(3.0)])
    assert np.allclose(dist.probs, [0.75, 0.25], atol=1e-12)


def test_normalize_choices_rejects_non_finite():
    for bad in ([0.0, float("nan")], [float("inf"), 0.0], [0.0, -float("inf")]):
        with pytest.raises(NonFiniteScore):
            normalize_choices(bad)


def test_normalize_choices_rejects_short_vectors():
    with pytest.raises(ValueError):
        normalize_choices([0.0])


_logscore_vectors = st.lists(
    st.floats(min_value=-100.0, max_value=100.0, allow_nan=False),
    min_size=2,
    max_size=8,
)


@given(_logscore_vectors)
@settings(max_examples=300)
def test_normalize_choices_sums_to_one(scores):
    dist = normalize_choices(scores)
    assert abs(float(dist.probs.sum()) - 1.0) < 1e-9
    assert np.all(dist.probs >= 0)


@given(_logscore_vectors, st.floats(min_value=-100.0, max_value=100.0))
@settings(max_examples=300)
def test_normalize_choices_shift_invariant(scores, shift):
    base = normalize_choices(scores)
    shifted = normalize_choices([s + shift for s in scores])
    assert np.max(np.abs(base.probs - shifted.probs)) < 1e-9


@pytest.mark.parametrize("k", range(2, 9))
def test_uniform_distribution_signals(k):
    dist = normalize_choices([0.0] * k)
    p, entropy = sentence_signals(dist)
    assert abs(p - 1.0 / k) < 1e-9
    assert abs(entropy - math.log(k)) < 1e-9


def test_entropy_worked_example():
    dist = normalize_choices([math.log(0.75), math.log(0.25)])
    _, entropy = sentence_signals(dist)
    assert abs(entropy - 0.5623) < 1e-4


@given(_logscore_vectors)
@settings(max_examples=300)
def test_entropy_bounds(scores):
    dist = normalize_choices(scores)
    p, entropy = sentence_signals(dist)
    k = len(scores)
    assert -1e-12 <= entropy <= math.log(k) + 1e-9
    assert 1.0 / k - 1e-9 <= p <= 1.0


def test_answer_logscore_sums():
    assert answer_logscore([-0.5, -1.25]) == pytest.approx(-1.75)


def test_answer_logscore_rejects_empty():
    with pytest.raises(InvalidAnswerTokens):
        answer_logscore([])


def test_prefix_lengths_cumulative():
    assert prefix_lengths(["a b", "c", "d e f"]) == [2, 3, 6]


def _make_trajectory(qid="q0", k=4, t=3, label=True, seed=0):
    rng = np.random.default_rng(seed)
    texts = [f"Sentence number {i} has some words." for i in range(t)]
    plens = prefix_lengths(texts)
    sentences = []
    for i in range(t):
        dist = normalize_choices(rng.normal(size=k))
        p, entropy = sentence_signals(dist)
        sentences.append(
            SentenceRecord(
                text=texts[i], distribution=dist, p=p, entropy=entropy, prefix_len=plens[i]
            )
        )
    return Trajectory(
        question_id=qid,
        sentences=sentences,
        greedy_answer=1,
        greedy_token_cost=120,
        label=label,
    )


def test_trajectory_roundtrip(tmp_path):
    trajs = [_make_trajectory(f"q{i}", seed=i, label=(i % 2 == 0)) for i in range(5)]
    trajs[3].label = None
    path = tmp_path / "out.jsonl"
    write_trajectories(path, trajs)

    with open(path) as fh:
        header = json.loads(fh.readline())
    assert header == {"schema": "traj/1"}

    loaded = read_trajectories(path)
    assert len(loaded) == len(trajs)
    for orig, back in zip(trajs, loaded):
        assert back.question_id == orig.question_id
        assert back.greedy_answer == orig.greedy_answer
        assert back.greedy_token_cost == orig.greedy_token_cost
        assert back.label == orig.label
        for s0, s1 in zip(orig.sentences, back.sentences):
            assert s1.text == s0.text
            assert s1.prefix_len == s0.prefix_len
            assert np.allclose(s1.distribution.probs, s0.distribution.probs, atol=1e-12)
        back.validate()


def test_trajectory_read_rejects_duplicates(tmp_path):
    path = tmp_path / "dup.jsonl"
    write_trajectories(path, [_make_trajectory("q0"), _make_trajectory("q0", seed=1)])
    with pytest.raises(DuplicateId):
        read_trajectories(path)


def test_trajectory_read_rejects_wrong_schema(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"schema": "other/1"}\n')
    with pytest.raises(ParseError) as err:
        read_trajectories(path)
    assert err.value.line == 1


def test_trajectory_read_reports_bad_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"schema": "traj/1"}\nnot json\n')
    with pytest.raises(ParseError) as err:
        read_trajectories(path)
    assert err.value.line == 2


def test_validate_catches_stale_signals():
    traj = _make_trajectory()
    traj.sentences[1].p = traj.sentences[1].p + 0.1
    with pytest.raises(ValueError):
        traj.validate()


def test_validate_catches_non_increasing_prefix():
    traj = _make_trajectory()
    traj.sentences[2].prefix_len = traj.sentences[1].prefix_len
    with pytest.raises(ValueError):
        traj.validate()


def test_validate_catches_bad_answer_index():
    traj = _make_trajectory(k=4)
    traj.greedy_answer = 4
    with pytest.raises(ValueError):
        traj.validate()


def test_distribution_validate_checks_softmax_link():
    dist = normalize_choices([0.0, 1.0, -1.0])
    dist.validate()
    broken = ChoiceDistribution(
        probs=np.array([0.5, 0.3, 0.2]), log_scores=dist.log_scores.copy()
    )
    with pytest.raises(ValueError):
        broken.validate()


def test_questions_roundtrip(tmp_path):
    qs = [
        McQuestion("a", "Pick one.", ["opt A", "opt B", "opt C"], gold_idx=2),
        McQuestion("b", "Pick again.", ["yes", "no"], gold_idx=None),
    ]
    path = tmp_path / "qs.jsonl"
    write_questions(path, qs)
    loaded = load_questions(path)
    assert [q.question_id for q in loaded] == ["a", "b"]
    assert loaded[0].gold_idx == 2
    assert loaded[1].gold_idx is None
    assert loaded[0].options == ["opt A", "opt B", "opt C"]


def test_questions_reject_single_option(tmp_path):
    path = tmp_path / "qs.jsonl"
    path.write_text(
        '{"schema": "questions/1"}\n{"id": "a", "question": "?", "options": ["only"]}\n'
    )
    with pytest.raises(ParseError) as err:
        load_questions(path)
    assert err.value.line == 2


def test_questions_reject_duplicate_ids(tmp_path):
    path = tmp_path / "qs.jsonl"
    rec = '{"id": "a", "question": "?", "options": ["x", "y"]}\n'
    path.write_text('{"schema": "questions/1"}\n' + rec + rec)
    with pytest.raises(DuplicateId):
        load_questions(path)
