"""Per-sentence feature extraction.

Turns a scored trajectory into a T x D float64 matrix: 12 numeric columns
derived from the per-sentence answer distributions, and 20 linguistic columns
derived from the sentence text and the question it answers. Column order is
frozen by the layout lists below; a layout registry file records the order any
feature dump was written with.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import lexicons
from .errors import ParseError
from .jsonl import read_jsonl, write_jsonl
from .trajectory import McQuestion, Trajectory

FEATURES_SCHEMA = "features/1"
LABELS_SCHEMA = "labels/1"
LAYOUTS_SCHEMA = "layouts/1"

NUMERIC_LAYOUT = [
    "p",
    "entropy",
    "p_over_log_len",
    "delta_p",
    "delta_entropy",
    "p_roll_std",
    "p_roll_range",
    "prefix_len",
    "p_ema",
    "delta_ema",
    "p_zscore",
    "ema_zscore",
]

LINGUISTIC_LAYOUT = [
    "tok_count",
    "char_count",
    "avg_tok_len",
    "stopword_ratio",
    "comma_count",
    "period_count",
    "question_count",
    "exclam_count",
    "punct_density",
    "digit_ratio",
    "upper_ratio",
    "q_overlap_count",
    "q_overlap_ratio",
    "opt_overlap_count",
    "opt_overlap_ratio",
    "hedge_count",
    "certainty_count",
    "connector_count",
    "position_frac",
    "is_final",
]

SUBSETS = ("full", "numeric", "linguistic")

_PUNCT = set(string.punctuation)


def layout_for_subset(subset: str) -> list[str]:
    if subset == "full":
        return NUMERIC_LAYOUT + LINGUISTIC_LAYOUT
    if subset == "numeric":
        return list(NUMERIC_LAYOUT)
    if subset == "linguistic":
        return list(LINGUISTIC_LAYOUT)
    raise ValueError(f"unknown feature subset {subset!r}")


@dataclass(frozen=True)
class FeatureConfig:
    subset: str = "full"
    ema_decay: float = 0.3
    window: int = 3
    zscore_epsilon: float = 1e-8
    hedges: frozenset = field(default=lexicons.HEDGES)
    certainty: frozenset = field(default=lexicons.CERTAINTY)
    connectors: frozenset = field(default=lexicons.CONNECTORS)
    stopwords: frozenset = field(default=lexicons.STOPWORDS)

    def __post_init__(self):
        if self.subset not in SUBSETS:
            raise ValueError(f"unknown feature subset {self.subset!r}")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.window < 2:
            raise ValueError("window must be at least 2")
        if self.zscore_epsilon <= 0.0:
            raise ValueError("zscore_epsilon must be positive")
        for name in ("hedges", "certainty", "connectors", "stopwords"):
            lex = getattr(self, name)
            if not lex:
                raise ValueError(f"lexicon {name} is empty")
            if any(w != w.lower() or not w for w in lex):
                raise ValueError(f"lexicon {name} must be lowercase")

    @property
    def dim(self) -> int:
        return len(layout_for_subset(self.subset))

    @property
    def layout(self) -> list[str]:
        return layout_for_subset(self.subset)


@dataclass
class FeatureSequence:
    question_id: str
    x: np.ndarray  # (T, D) float64
    mask: np.ndarray  # (T,) float64, 1.0 = valid row
    layout_id: str

    def validate(self) -> None:
        if self.x.ndim != 2 or self.mask.ndim != 1 or self.x.shape[0] != self.mask.shape[0]:
            raise ValueError("feature matrix and mask shapes disagree")
        if self.x.shape[0] < 1:
            raise ValueError("feature matrix has no rows")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("feature matrix contains NaN or infinity")
        if not np.all((self.mask == 0.0) | (self.mask == 1.0)):
            raise ValueError("mask must be binary")


def _rolling(values: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    t = len(values)
    std = np.empty(t)
    rng = np.empty(t)
    for i in range(t):
        lo = max(0, i - window + 1)
        win = values[lo : i + 1]
        std[i] = win.std()
        rng[i] = win.max() - win.min()
    return std, rng


def _zscore(values: np.ndarray, eps: float) -> np.ndarray:
    return (values - values.mean()) / (values.std() + eps)


def numeric_features(traj: Trajectory, cfg: FeatureConfig) -> np.ndarray:
    """Shape (T, 12); column order is NUMERIC_LAYOUT."""
    p = np.array([s.p for s in traj.sentences], dtype=np.float64)
    entropy = np.array([s.entropy for s in traj.sentences], dtype=np.float64)
    plen = np.array([s.prefix_len for s in traj.sentences], dtype=np.float64)

    delta_p = np.diff(p, prepend=p[:1])
    delta_h = np.diff(entropy, prepend=entropy[:1])
    roll_std, roll_rng = _rolling(p, cfg.window)

    ema = np.empty_like(p)
    ema[0] = p[0]
    a = cfg.ema_decay
    for i in range(1, len(p)):
        ema[i] = a * p[i] + (1.0 - a) * ema[i - 1]
    delta_ema = np.diff(ema, prepend=ema[:1])

    cols = [
        p,
        entropy,
        p / np.log1p(plen),
        delta_p,
        delta_h,
        roll_std,
        roll_rng,
        plen,
        ema,
        delta_ema,
        _zscore(p, cfg.zscore_epsilon),
        _zscore(ema, cfg.zscore_epsilon),
    ]
    return np.stack(cols, axis=1)


def _norm_tokens(text: str) -> list[str]:
    out = []
    for tok in text.split():
        t = tok.lower().strip(string.punctuation)
        if t:
            out.append(t)
    return out


def linguistic_features(
    sentence: str,
    t_index: int,
    t_total: int,
    question: McQuestion,
    cfg: FeatureConfig,
) -> np.ndarray:
    """Shape (20,); column order is LINGUISTIC_LAYOUT. t_index is 1-based."""
    raw_tokens = sentence.split()
    n_tok = len(raw_tokens)
    n_char = len(sentence)
    norm = _norm_tokens(sentence)

    q_ref = set(_norm_tokens(question.question))
    opt_ref = set()
    for opt in question.options:
        opt_ref.update(_norm_tokens(opt))

    q_overlap = sum(1 for t in norm if t in q_ref)
    opt_overlap = sum(1 for t in norm if t in opt_ref)

    n_punct = sum(1 for c in sentence if c in _PUNCT)
    n_digit = sum(1 for c in sentence if c.isdigit())
    n_upper = sum(1 for c in sentence if c.isupper())

    return np.array(
        [
            n_tok,
            n_char,
            sum(len(t) for t in raw_tokens) / n_tok if n_tok else 0.0,
            sum(1 for t in norm if t in cfg.stopwords) / n_tok if n_tok else 0.0,
            sentence.count(","),
            sentence.count("."),
            sentence.count("?"),
            sentence.count("!"),
            n_punct / n_char if n_char else 0.0,
            n_digit / n_char if n_char else 0.0,
            n_upper / n_char if n_char else 0.0,
            q_overlap,
            q_overlap / n_tok if n_tok else 0.0,
            opt_overlap,
            opt_overlap / n_tok if n_tok else 0.0,
            sum(1 for t in norm if t in cfg.hedges),
            sum(1 for t in norm if t in cfg.certainty),
            sum(1 for t in norm if t in cfg.connectors),
            t_index / t_total,
            1.0 if t_index == t_total else 0.0,
        ],
        dtype=np.float64,
    )


def assemble(
    traj: Trajectory, cfg: FeatureConfig, question: McQuestion | None = None
) -> FeatureSequence:
    """Build the feature matrix for one trajectory.

    The question is required whenever the subset includes linguistic columns,
    because the overlap features compare sentence tokens against the question
    and its answer options.
    """
    t_total = len(traj.sentences)
    blocks = []
    if cfg.subset in ("full", "numeric"):
        blocks.append(numeric_features(traj, cfg))
    if cfg.subset in ("full", "linguistic"):
        if question is None:
            raise ValueError(f"subset {cfg.subset!r} needs the question for overlap features")
        if question.question_id != traj.question_id:
            raise ValueError(
                f"question {question.question_id!r} does not match trajectory "
                f"{traj.question_id!r}"
            )
        ling = np.stack(
            [
                linguistic_features(s.text, i + 1, t_total, question, cfg)
                for i, s in enumerate(traj.sentences)
            ]
        )
        blocks.append(ling)
    x = np.concatenate(blocks, axis=1) if len(blocks) > 1 else blocks[0]
    seq = FeatureSequence(
        question_id=traj.question_id,
        x=x,
        mask=np.ones(t_total, dtype=np.float64),
        layout_id=cfg.subset,
    )
    seq.validate()
    return seq


# --- serialization ---------------------------------------------------------


def write_features(path: str | Path, seqs: Iterable[FeatureSequence]) -> None:
    def records():
        for seq in seqs:
            seq.validate()
            yield {
                "question_id": seq.question_id,
                "mask_len": int(seq.mask.sum()),
                "layout_id": seq.layout_id,
                "rows": [[float(v) for v in row] for row in seq.x],
            }

    write_jsonl(path, FEATURES_SCHEMA, records())


def read_features(path: str | Path) -> list[FeatureSequence]:
    out = []
    for lineno, rec in enumerate(read_jsonl(path, FEATURES_SCHEMA), start=2):
        try:
            x = np.array(rec["rows"], dtype=np.float64)
            if x.ndim != 2:
                raise ValueError("rows must form a matrix")
            seq = FeatureSequence(
                question_id=str(rec["question_id"]),
                x=x,
                mask=np.ones(x.shape[0], dtype=np.float64),
                layout_id=str(rec["layout_id"]),
            )
            if int(rec["mask_len"]) != x.shape[0]:
                raise ValueError("mask_len disagrees with row count")
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad feature record: {exc!r}", line=lineno) from exc
        out.append(seq)
    return out


def write_layout_registry(path: str | Path) -> None:
    write_jsonl(
        path,
        LAYOUTS_SCHEMA,
        [{"layout_id": s, "columns": layout_for_subset(s)} for s in SUBSETS],
    )


def read_layout_registry(path: str | Path) -> dict[str, list[str]]:
    return {
        rec["layout_id"]: list(rec["columns"])
        for rec in read_jsonl(path, LAYOUTS_SCHEMA)
    }


def write_labels(path: str | Path, labels: dict[str, bool]) -> None:
    write_jsonl(
        path,
        LABELS_SCHEMA,
        [{"question_id": k, "label": bool(v)} for k, v in labels.items()],
    )


def read_labels(path: str | Path) -> dict[str, bool]:
    out: dict[str, bool] = {}
    for lineno, rec in enumerate(read_jsonl(path, LABELS_SCHEMA), start=2):
        try:
            out[str(rec["question_id"])] = bool(rec["label"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad label record: {exc!r}", line=lineno) from exc
    return out
