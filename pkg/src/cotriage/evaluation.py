"""Routing evaluation: per-question outcome vectors, summary statistics,
paired bootstrap significance, and report files.

Bootstrap p-values use the two-sided sign-flip convention: resample question
indices with replacement (the same draws for both metrics of a pair, keeping
the comparison paired), count mean-differences whose sign disagrees with the
observed difference, double, and clamp to [0, 1]. Resample i uses the rng
seeded with [seed, i] so any resample can be reproduced in isolation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .calibration import CalibrationItem
from .errors import AlignmentError, DuplicateId, EmptyDataset, IoError, ParseError
from .jsonl import read_jsonl, write_jsonl
from .trajectory import McQuestion, Trajectory
from .voting import ABSTAIN, SampledPath, run_method

REPORT_SCHEMA = "report/1"
OUTCOMES_SCHEMA = "outcomes/1"


@dataclass
class OutcomeVector:
    """Aligned per-question correctness and token cost for one method."""

    question_ids: list[str]
    correct: np.ndarray  # bool
    tokens: np.ndarray  # int64

    def __post_init__(self):
        if len(self.question_ids) != len(self.correct) or len(self.correct) != len(self.tokens):
            raise ValueError("outcome arrays must align")
        if len(set(self.question_ids)) != len(self.question_ids):
            raise DuplicateId("outcome vector repeats a question id")
        self.correct = np.asarray(self.correct, dtype=bool)
        self.tokens = np.asarray(self.tokens, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.question_ids)


@dataclass(frozen=True)
class Summary:
    accuracy: float
    mean_tokens: float
    tokens_q1: float
    tokens_median: float
    tokens_q3: float


def summarize(v: OutcomeVector) -> Summary:
    if len(v) == 0:
        raise EmptyDataset("cannot summarize an empty outcome vector")
    q1, med, q3 = np.percentile(v.tokens, [25, 50, 75], method="linear")
    return Summary(
        accuracy=float(v.correct.mean()),
        mean_tokens=float(v.tokens.mean()),
        tokens_q1=float(q1),
        tokens_median=float(med),
        tokens_q3=float(q3),
    )


@dataclass(frozen=True)
class BootstrapResult:
    delta_accuracy: float
    delta_tokens: float
    p_accuracy: float
    p_tokens: float
    resamples: int


def _align(a: OutcomeVector, b: OutcomeVector) -> OutcomeVector:
    """Reorder b to a's question order."""
    if set(a.question_ids) != set(b.question_ids):
        raise AlignmentError("outcome vectors cover different question sets")
    pos = {qid: i for i, qid in enumerate(b.question_ids)}
    idx = np.array([pos[qid] for qid in a.question_ids])
    return OutcomeVector(list(a.question_ids), b.correct[idx], b.tokens[idx])


def _sign_flip_p(observed: float, deltas: np.ndarray) -> float:
    if observed == 0.0:
        return 1.0
    flips = int(np.sum(np.sign(deltas) != np.sign(observed)))
    return min(1.0, 2.0 * flips / len(deltas))


def paired_bootstrap(
    a: OutcomeVector,
    b: OutcomeVector,
    resamples: int = 2000,
    seed: int = 0,
    method: str = "sign-flip",
) -> BootstrapResult:
    """Two-sided significance of accuracy and token-cost differences (a - b).

    Swapping a and b negates the deltas and leaves both p-values unchanged:
    the index draws depend only on (seed, i), not on the operand order.
    """
    if method not in ("sign-flip", "percentile"):
        raise ValueError(f"unknown bootstrap method {method!r}")
    if len(a) == 0:
        raise EmptyDataset("cannot bootstrap empty outcome vectors")
    b = _align(a, b)
    n = len(a)
    acc_a = a.correct.astype(np.float64)
    acc_b = b.correct.astype(np.float64)
    tok_a = a.tokens.astype(np.float64)
    tok_b = b.tokens.astype(np.float64)
    obs_acc = float(acc_a.mean() - acc_b.mean())
    obs_tok = float(tok_a.mean() - tok_b.mean())

    d_acc = np.empty(resamples)
    d_tok = np.empty(resamples)
    for i in range(resamples):
        idx = np.random.default_rng([seed, i]).integers(0, n, size=n)
        d_acc[i] = acc_a[idx].mean() - acc_b[idx].mean()
        d_tok[i] = tok_a[idx].mean() - tok_b[idx].mean()

    if method == "sign-flip":
        p_acc = _sign_flip_p(obs_acc, d_acc)
        p_tok = _sign_flip_p(obs_tok, d_tok)
    else:
        p_acc = min(1.0, 2.0 * min(float(np.mean(d_acc <= 0)), float(np.mean(d_acc >= 0))))
        p_tok = min(1.0, 2.0 * min(float(np.mean(d_tok <= 0)), float(np.mean(d_tok >= 0))))
    return BootstrapResult(
        delta_accuracy=obs_acc,
        delta_tokens=obs_tok,
        p_accuracy=p_acc,
        p_tokens=p_tok,
        resamples=resamples,
    )


# --- building routing inputs -------------------------------------------------


def build_calibration_items(
    trajectories: Sequence[Trajectory],
    scores: Sequence[float],
    paths_by_qid: Mapping[str, Sequence[SampledPath]],
    questions: Mapping[str, McQuestion],
    method: str = "sc",
    budget: int = 10,
    votes_needed: int | None = None,
    include_greedy_vote: bool = False,
) -> list[CalibrationItem]:
    """Join trajectories, detector scores, sampled paths and gold answers.

    Correctness of the multi-path route comes from replaying the voting
    method on the archived paths; an abstaining vote is simply incorrect.
    """
    if len(trajectories) != len(scores):
        raise AlignmentError("need exactly one score per trajectory")
    items = []
    for traj, score in zip(trajectories, scores):
        qid = traj.question_id
        if qid not in questions:
            raise AlignmentError(f"no question for trajectory {qid!r}")
        gold = questions[qid].gold_idx
        if gold is None:
            raise AlignmentError(f"question {qid!r} has no gold answer")
        if qid not in paths_by_qid:
            raise AlignmentError(f"no sampled paths for {qid!r}")
        extra = None
        if include_greedy_vote:
            extra = (traj.greedy_answer, float(traj.sentences[-1].p))
        vote = run_method(
            paths_by_qid[qid],
            method,
            budget=budget,
            votes_needed=votes_needed,
            extra_vote=extra if method != "dv" else None,
        )
        items.append(
            CalibrationItem(
                question_id=qid,
                score=float(score),
                greedy_correct=traj.greedy_answer == gold,
                greedy_tokens=traj.greedy_token_cost,
                multi_correct=vote.answer != ABSTAIN and vote.answer == gold,
                multi_tokens=vote.tokens_used,
            )
        )
    return items


def route_outcomes(
    items: Sequence[CalibrationItem], tau: float, sunk_greedy: bool = True
) -> dict[str, OutcomeVector]:
    """Outcome vectors for the greedy route, the multi-path route, and the
    threshold policy that accepts the greedy answer when score >= tau."""
    if not items:
        raise EmptyDataset("cannot route zero items")
    ids = [it.question_id for it in items]
    greedy = OutcomeVector(
        ids,
        np.array([it.greedy_correct for it in items]),
        np.array([it.greedy_tokens for it in items]),
    )
    multi = OutcomeVector(
        ids,
        np.array([it.multi_correct for it in items]),
        np.array([it.multi_tokens for it in items]),
    )
    pol_correct = []
    pol_tokens = []
    for it in items:
        if it.score >= tau:
            pol_correct.append(it.greedy_correct)
            pol_tokens.append(it.greedy_tokens)
        else:
            pol_correct.append(it.multi_correct)
            pol_tokens.append(it.multi_tokens + (it.greedy_tokens if sunk_greedy else 0))
    policy = OutcomeVector(ids, np.array(pol_correct), np.array(pol_tokens))
    return {"greedy": greedy, "multi": multi, "policy": policy}


def write_outcomes(path: str | Path, v: OutcomeVector) -> None:
    records = (
        {"question_id": qid, "correct": bool(c), "tokens": int(t)}
        for qid, c, t in zip(v.question_ids, v.correct, v.tokens)
    )
    write_jsonl(path, OUTCOMES_SCHEMA, records)


def read_outcomes(path: str | Path) -> OutcomeVector:
    ids: list[str] = []
    correct: list[bool] = []
    tokens: list[int] = []
    for lineno, rec in enumerate(read_jsonl(path, OUTCOMES_SCHEMA), start=2):
        try:
            ids.append(str(rec["question_id"]))
            correct.append(bool(rec["correct"]))
            tokens.append(int(rec["tokens"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad outcome record: {exc!r}", line=lineno) from exc
    return OutcomeVector(ids, np.array(correct, dtype=bool), np.array(tokens, dtype=np.int64))


# --- report files -------------------------------------------------------------


def _open_report_file(path: Path, seed: int):
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write report file {path}: {exc}") from exc
    fh.write(f"# schema={REPORT_SCHEMA} seed={seed}\n")
    return fh


def write_report(
    methods: Mapping[str, OutcomeVector],
    out_dir: str | Path,
    seed: int = 0,
    resamples: int = 2000,
) -> list[Path]:
    """Write summary.csv, significance.csv and outcomes.csv under out_dir.

    significance.csv holds one row per unordered method pair, marked '*' when
    p < 0.05. Every file starts with a comment line naming the schema version
    and the bootstrap seed.
    """
    if not methods:
        raise EmptyDataset("no methods to report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create report directory {out_dir}: {exc}") from exc
    written = []

    path = out_dir / "summary.csv"
    with _open_report_file(path, seed) as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "n", "accuracy", "mean_tokens", "tokens_q1", "tokens_median", "tokens_q3"]
        )
        for name in sorted(methods):
            s = summarize(methods[name])
            writer.writerow(
                [name, len(methods[name]), s.accuracy, s.mean_tokens, s.tokens_q1,
                 s.tokens_median, s.tokens_q3]
            )
    written.append(path)

    path = out_dir / "significance.csv"
    with _open_report_file(path, seed) as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method_a", "method_b", "delta_accuracy", "delta_tokens",
             "p_accuracy", "p_tokens", "marker"]
        )
        names = sorted(methods)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                res = paired_bootstrap(methods[a], methods[b], resamples=resamples, seed=seed)
                marker = "*" if min(res.p_accuracy, res.p_tokens) < 0.05 else "n.s."
                writer.writerow(
                    [a, b, res.delta_accuracy, res.delta_tokens,
                     res.p_accuracy, res.p_tokens, marker]
                )
    written.append(path)

    path = out_dir / "outcomes.csv"
    with _open_report_file(path, seed) as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "question_id", "correct", "tokens"])
        for name in sorted(methods):
            v = methods[name]
            for qid, c, t in zip(v.question_ids, v.correct, v.tokens):
                writer.writerow([name, qid, int(c), int(t)])
    written.append(path)
    return written
