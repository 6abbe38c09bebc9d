"""Threshold calibration for the accept-or-escalate policy.

Simulates routing on held-out items across a grid of thresholds and picks the
most token-frugal threshold whose accuracy stays within a relative drop of
the best grid accuracy. An item routed to multi-path reasoning still pays for
its greedy pass by default: that cost is sunk by the time the decision is
made. The exclusive accounting (escalation discards the greedy cost) stays
available behind sunk_greedy=False.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import EmptyDataset

DEFAULT_MAX_REL_DROP = 0.005


@dataclass(frozen=True)
class CalibrationItem:
    """Per-question outcomes of both routes plus the detector score."""

    question_id: str
    score: float
    greedy_correct: bool
    greedy_tokens: int
    multi_correct: bool
    multi_tokens: int


@dataclass(frozen=True)
class CalibrationPoint:
    tau: float
    accuracy: float
    mean_tokens: float
    token_reduction: float
    accept_rate: float


@dataclass
class CalibrationProfile:
    points: list[CalibrationPoint]
    baseline_method: str
    greedy_source: str
    sunk_greedy: bool
    selected_tau: float | None = None


def default_grid() -> list[float]:
    return [i / 20 for i in range(21)]


def simulate_at_tau(
    items: Sequence[CalibrationItem], tau: float, sunk_greedy: bool = True
) -> CalibrationPoint:
    """Route every item at threshold tau and aggregate accuracy and cost.

    token_reduction is relative to always running the multi-path baseline.
    """
    if not items:
        raise EmptyDataset("cannot calibrate on zero items")
    n = len(items)
    correct = 0
    tokens = 0
    accepted = 0
    baseline = 0
    for item in items:
        baseline += item.multi_tokens
        if item.score >= tau:
            accepted += 1
            correct += item.greedy_correct
            tokens += item.greedy_tokens
        else:
            correct += item.multi_correct
            tokens += item.multi_tokens
            if sunk_greedy:
                tokens += item.greedy_tokens
    mean_tokens = tokens / n
    mean_baseline = baseline / n
    return CalibrationPoint(
        tau=tau,
        accuracy=correct / n,
        mean_tokens=mean_tokens,
        token_reduction=1.0 - mean_tokens / mean_baseline,
        accept_rate=accepted / n,
    )


def sweep(
    items: Sequence[CalibrationItem],
    grid: Sequence[float] | None = None,
    sunk_greedy: bool = True,
    baseline_method: str = "sc",
    greedy_source: str = "greedy",
) -> CalibrationProfile:
    if grid is None:
        grid = default_grid()
    if len(grid) < 1 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("threshold grid must be strictly increasing")
    points = [simulate_at_tau(items, tau, sunk_greedy=sunk_greedy) for tau in grid]
    return CalibrationProfile(
        points=points,
        baseline_method=baseline_method,
        greedy_source=greedy_source,
        sunk_greedy=sunk_greedy,
    )


def select_threshold(
    profile: CalibrationProfile, max_rel_drop: float = DEFAULT_MAX_REL_DROP
) -> float:
    """Most token-frugal feasible threshold; ties go to the smaller tau.

    Feasible means accuracy >= (1 - max_rel_drop) * best grid accuracy.
    The best-accuracy point is always feasible, so a selection always exists.
    """
    if not profile.points:
        raise EmptyDataset("profile has no grid points")
    max_acc = max(pt.accuracy for pt in profile.points)
    floor = (1.0 - max_rel_drop) * max_acc
    best: CalibrationPoint | None = None
    for pt in profile.points:
        if pt.accuracy < floor:
            continue
        if best is None or pt.token_reduction > best.token_reduction:
            best = pt
    profile.selected_tau = best.tau
    return best.tau


def profile_to_csv(profile: CalibrationProfile, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "accuracy", "mean_tokens", "token_reduction", "accept_rate"])
        for pt in profile.points:
            writer.writerow(
                [pt.tau, pt.accuracy, pt.mean_tokens, pt.token_reduction, pt.accept_rate]
            )


def write_selection_summary(
    profile: CalibrationProfile, path: str | Path, max_rel_drop: float = DEFAULT_MAX_REL_DROP
) -> None:
    if profile.selected_tau is None:
        raise ValueError("select_threshold has not been run on this profile")
    doc = {
        "selected_tau": profile.selected_tau,
        "max_accuracy": max(pt.accuracy for pt in profile.points),
        "max_rel_drop": max_rel_drop,
        "baseline_method": profile.baseline_method,
        "greedy_source": profile.greedy_source,
        "sunk_greedy": profile.sunk_greedy,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_selection_summary(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
