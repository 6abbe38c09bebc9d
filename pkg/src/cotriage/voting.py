"""Multi-path voting rules: self-consistency, confidence-weighted voting, and
dynamic voting with an early-consensus stop.

Paths that failed to produce a parsable answer carry the abstain sentinel -1.
Abstaining paths never receive votes but their tokens were still spent, so
they count toward cost. Tie-breaking is deterministic everywhere: higher
summed confidence first, then the lowest answer index, which also makes the
set-based voters invariant to path order.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DuplicateId, ParseError
from .jsonl import read_jsonl, write_jsonl

PATHS_SCHEMA = "paths/1"
ABSTAIN = -1


@dataclass(frozen=True)
class SampledPath:
    question_id: str
    sample_idx: int
    answer: int  # ABSTAIN when the sample produced no parsable answer
    token_cost: int
    confidence: float
    temperature: float = 1.0

    def validate(self) -> None:
        if self.sample_idx < 0:
            raise ValueError("sample_idx must be non-negative")
        if self.answer < ABSTAIN:
            raise ValueError("answer must be an option index or the abstain sentinel")
        if self.token_cost < 0:
            raise ValueError("token_cost must be non-negative")
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError("confidence must lie in (0, 1]")


@dataclass(frozen=True)
class VoteResult:
    answer: int  # ABSTAIN when every consumed path abstained
    paths_used: int
    tokens_used: int
    stopped_early: bool = False


def _tally(
    answers: Sequence[int], confidences: Sequence[float] | None
) -> tuple[dict[int, int], dict[int, float]]:
    counts: dict[int, int] = defaultdict(int)
    conf: dict[int, float] = defaultdict(float)
    for i, a in enumerate(answers):
        if a == ABSTAIN:
            continue
        counts[a] += 1
        conf[a] += confidences[i] if confidences is not None else 0.0
    return counts, conf


def majority_vote(
    answers: Sequence[int], confidences: Sequence[float] | None = None
) -> int:
    """Most-voted answer; ties by summed confidence, then lowest index."""
    counts, conf = _tally(answers, confidences)
    if not counts:
        return ABSTAIN
    return min(counts, key=lambda a: (-counts[a], -conf[a], a))


def confidence_weighted_vote(answers: Sequence[int], confidences: Sequence[float]) -> int:
    """Answer with the largest summed confidence; ties to the lowest index."""
    if len(answers) != len(confidences):
        raise ValueError("answers and confidences must align")
    _, conf = _tally(answers, confidences)
    if not conf:
        return ABSTAIN
    return min(conf, key=lambda a: (-conf[a], a))


def dynamic_vote(
    paths: Sequence[SampledPath],
    budget: int = 10,
    votes_needed: int | None = None,
) -> VoteResult:
    """Consume paths in order, stopping once an answer has votes_needed votes.

    Without early consensus the drawn paths fall back to confidence-weighted
    voting. Tokens are counted for every consumed path, abstains included.
    """
    if budget < 1:
        raise ValueError("budget must be positive")
    if votes_needed is None:
        votes_needed = budget // 2 + 1
    if votes_needed < 1:
        raise ValueError("votes_needed must be positive")
    counts: dict[int, int] = defaultdict(int)
    used = 0
    tokens = 0
    consumed: list[SampledPath] = []
    for path in paths[:budget]:
        consumed.append(path)
        used += 1
        tokens += path.token_cost
        if path.answer != ABSTAIN:
            counts[path.answer] += 1
            if counts[path.answer] >= votes_needed:
                return VoteResult(path.answer, used, tokens, stopped_early=True)
    answer = confidence_weighted_vote(
        [p.answer for p in consumed], [p.confidence for p in consumed]
    )
    return VoteResult(answer, used, tokens, stopped_early=False)


def run_method(
    paths: Sequence[SampledPath],
    method: str,
    budget: int = 10,
    votes_needed: int | None = None,
    extra_vote: tuple[int, float] | None = None,
) -> VoteResult:
    """Answer one question with a voting method over its sampled paths.

    extra_vote injects an already-paid-for answer (the greedy one) into the
    tallies of the set-based methods at zero token cost.
    """
    if method == "dv":
        if extra_vote is not None:
            raise ValueError("dynamic voting does not take an extra vote")
        return dynamic_vote(paths, budget=budget, votes_needed=votes_needed)
    window = list(paths[:budget])
    answers = [p.answer for p in window]
    confidences = [p.confidence for p in window]
    if extra_vote is not None:
        answers.append(extra_vote[0])
        confidences.append(extra_vote[1])
    if method == "sc":
        answer = majority_vote(answers, confidences)
    elif method == "cer":
        answer = confidence_weighted_vote(answers, confidences)
    else:
        raise ValueError(f"unknown voting method {method!r}")
    tokens = sum(p.token_cost for p in window)
    return VoteResult(answer, len(window), tokens, stopped_early=False)


# --- serialization -----------------------------------------------------------


def write_paths(path: str | Path, paths: Iterable[SampledPath]) -> None:
    def records():
        for p in paths:
            p.validate()
            yield {
                "question_id": p.question_id,
                "sample_idx": p.sample_idx,
                "answer": p.answer,
                "token_cost": p.token_cost,
                "confidence": p.confidence,
                "temperature": p.temperature,
            }

    write_jsonl(path, PATHS_SCHEMA, records())


def read_paths(path: str | Path) -> dict[str, list[SampledPath]]:
    """Paths grouped by question, ordered by sample index within a question."""
    grouped: dict[str, list[SampledPath]] = defaultdict(list)
    seen: set[tuple[str, int]] = set()
    for lineno, rec in enumerate(read_jsonl(path, PATHS_SCHEMA), start=2):
        try:
            p = SampledPath(
                question_id=str(rec["question_id"]),
                sample_idx=int(rec["sample_idx"]),
                answer=int(rec["answer"]),
                token_cost=int(rec["token_cost"]),
                confidence=float(rec["confidence"]),
                temperature=float(rec.get("temperature", 1.0)),
            )
            p.validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad path record: {exc!r}", line=lineno) from exc
        key = (p.question_id, p.sample_idx)
        if key in seen:
            raise DuplicateId(f"duplicate sample {p.sample_idx} for {p.question_id!r}")
        seen.add(key)
        grouped[p.question_id].append(p)
    for qid in grouped:
        grouped[qid].sort(key=lambda p: p.sample_idx)
    return dict(grouped)
