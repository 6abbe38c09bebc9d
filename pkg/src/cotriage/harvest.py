"""Harvesting trajectories from an OpenAI-compatible endpoint.

One generation request produces the greedy chain of thought; T x K teacher-
forced scoring requests (echo + logprobs on the completions route) produce
the per-sentence answer distributions. Scoring a prefix never re-generates
text: max_tokens is 0 and the endpoint echoes the prompt with per-token
log-probabilities, from which the answer span is summed.

The HTTP transport is a plain callable so tests substitute a fake endpoint;
everything above it (caching, retries, concurrency, parsing) is exercised for
real. Responses are cached on disk keyed by a hash of the model, template and
full payload, written atomically so concurrent workers cannot corrupt a
cache entry.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import requests

from .errors import CapabilityError, HarvestError
from .jsonl import dumps_record
from .trajectory import (
    McQuestion,
    SentenceRecord,
    Trajectory,
    answer_logscore,
    load_questions,
    normalize_choices,
    prefix_lengths,
    segment_sentences,
    sentence_signals,
)
from .voting import ABSTAIN, SampledPath

log = logging.getLogger(__name__)

load_dataset = load_questions


class TransportError(Exception):
    """Transient failure worth retrying (connection trouble, 5xx)."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "COTRIAGE_API_KEY"
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4
    cache_dir: str | None = None


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    system: str
    answer_marker: str = "Answer:"

    def option_letter(self, idx: int) -> str:
        return chr(ord("A") + idx)

    def question_block(self, q: McQuestion) -> str:
        lines = [q.question]
        for i, opt in enumerate(q.options):
            lines.append(f"({self.option_letter(i)}) {opt}")
        return "\n".join(lines)

    def generation_messages(self, q: McQuestion) -> list[dict]:
        user = (
            f"{self.question_block(q)}\n\n"
            f"Think step by step, then finish with a final line "
            f"'{self.answer_marker} <letter>'."
        )
        return [
            {"role": "system", "content": self.system},
            {"role": "user", "content": user},
        ]

    def scoring_context(self, q: McQuestion, prefix_sentences: Sequence[str]) -> str:
        return (
            f"{self.question_block(q)}\n"
            f"Reasoning: {' '.join(prefix_sentences)}\n"
            f"{self.answer_marker}"
        )

    def answer_continuation(self, idx: int) -> str:
        return f" {self.option_letter(idx)}"


TEMPLATES: dict[str, PromptTemplate] = {
    "mc-cot/1": PromptTemplate(
        template_id="mc-cot/1",
        system=(
            "You answer multiple-choice questions. Reason carefully in full "
            "sentences before committing to an option."
        ),
    ),
}


def parse_answer(text: str, marker: str, num_options: int) -> int | None:
    """Option index from the last 'Answer: <letter>' line, None if absent."""
    matches = re.findall(re.escape(marker) + r"\s*\(?([A-Za-z])\)?", text)
    if not matches:
        return None
    idx = ord(matches[-1].upper()) - ord("A")
    if 0 <= idx < num_options:
        return idx
    return None


def _default_transport(cfg: EndpointConfig) -> Callable[[str, dict], dict]:
    session = requests.Session()

    def call(route: str, payload: dict) -> dict:
        url = cfg.base_url.rstrip("/") + "/" + route.lstrip("/")
        headers = {}
        key = os.environ.get(cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = session.post(url, json=payload, headers=headers, timeout=cfg.timeout)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 500:
            raise TransportError(f"endpoint returned {resp.status_code}")
        if resp.status_code != 200:
            raise HarvestError(f"endpoint rejected request: {resp.status_code} {resp.text[:200]}")
        return resp.json()

    return call


class EndpointClient:
    """Caching, retrying front end over a transport callable."""

    def __init__(
        self,
        cfg: EndpointConfig,
        template_id: str = "mc-cot/1",
        transport: Callable[[str, dict], dict] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if template_id not in TEMPLATES:
            raise ValueError(f"unknown prompt template {template_id!r}")
        self.cfg = cfg
        self.template = TEMPLATES[template_id]
        self._transport = transport or _default_transport(cfg)
        self._sleep = sleep
        self.requests_made = 0
        self.cache_hits = 0

    def _cache_path(self, route: str, payload: dict) -> Path | None:
        if self.cfg.cache_dir is None:
            return None
        key = dumps_record(
            {
                "model": self.cfg.model,
                "template": self.template.template_id,
                "route": route,
                "payload": payload,
            }
        )
        digest = hashlib.sha256(key.encode("utf-8")).hexdigest()
        return Path(self.cfg.cache_dir) / f"{digest}.json"

    def post(self, route: str, payload: dict) -> dict:
        cache_path = self._cache_path(route, payload)
        if cache_path is not None and cache_path.exists():
            with open(cache_path, encoding="utf-8") as fh:
                self.cache_hits += 1
                return json.load(fh)
        last: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            try:
                self.requests_made += 1
                response = self._transport(route, payload)
                break
            except TransportError as exc:
                last = exc
                if attempt == self.cfg.max_retries:
                    raise HarvestError(
                        f"{route} failed after {self.cfg.max_retries + 1} attempts: {exc}"
                    ) from exc
                self._sleep(self.cfg.backoff * (2.0**attempt))
        if cache_path is not None:
            cache_path.parent.mkdir(parents=True, exist_ok=True)
            tmp = cache_path.with_name(cache_path.name + f".tmp{os.getpid()}")
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(response, fh, sort_keys=True)
            os.replace(tmp, cache_path)
        return response


def _completion_tokens(response: dict, text: str) -> int:
    usage = response.get("usage") or {}
    tokens = usage.get("completion_tokens")
    if isinstance(tokens, int) and tokens > 0:
        return tokens
    return max(1, len(text.split()))


def _generate(client: EndpointClient, q: McQuestion, temperature: float, seed: int, max_new_tokens: int) -> tuple[str, int]:
    payload = {
        "model": client.cfg.model,
        "messages": client.template.generation_messages(q),
        "temperature": temperature,
        "max_tokens": max_new_tokens,
        "seed": seed,
    }
    response = client.post("chat/completions", payload)
    try:
        text = response["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise HarvestError(f"malformed generation response for {q.question_id!r}") from exc
    return text, _completion_tokens(response, text)


def _score_answer_span(client: EndpointClient, context: str, continuation: str) -> float:
    payload = {
        "model": client.cfg.model,
        "prompt": context + continuation,
        "max_tokens": 0,
        "echo": True,
        "logprobs": 0,
    }
    response = client.post("completions", payload)
    try:
        lp = response["choices"][0]["logprobs"]
        token_logprobs = lp["token_logprobs"]
        offsets = lp["text_offset"]
    except (KeyError, IndexError, TypeError) as exc:
        raise CapabilityError(
            "scoring endpoint returned no log-probabilities; it cannot be used for harvesting"
        ) from exc
    span = [
        token_logprobs[i]
        for i in range(len(offsets))
        if offsets[i] >= len(context) and token_logprobs[i] is not None
    ]
    return answer_logscore(span)


def probe_scoring_capability(client: EndpointClient) -> None:
    """Fail fast (CapabilityError) if the endpoint cannot score tokens."""
    _score_answer_span(client, "probe:", " A")


def _score_distribution(client: EndpointClient, q: McQuestion, prefix: Sequence[str]):
    context = client.template.scoring_context(q, prefix)
    k = len(q.options)
    contexts = [(context, client.template.answer_continuation(i)) for i in range(k)]
    if client.cfg.max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=client.cfg.max_in_flight) as pool:
            scores = list(pool.map(lambda ca: _score_answer_span(client, *ca), contexts))
    else:
        scores = [_score_answer_span(client, *ca) for ca in contexts]
    return normalize_choices(scores)


def harvest_greedy(
    q: McQuestion, client: EndpointClient, max_new_tokens: int = 1024
) -> Trajectory:
    """Greedy trajectory for one question: 1 generation + T x K scoring calls.

    Results are deterministic given deterministic endpoint responses: scoring
    requests may run concurrently but land by (sentence, option) index. When
    the answer marker is missing from the generation, the final sentence's
    argmax choice stands in for the parsed answer.
    """
    text, token_cost = _generate(client, q, temperature=0.0, seed=0, max_new_tokens=max_new_tokens)
    sentences = segment_sentences(text)
    plens = prefix_lengths(sentences)

    pairs = [(s, i) for s in range(1, len(sentences) + 1) for i in range(len(q.options))]
    k = len(q.options)

    def score_pair(pair):
        s, i = pair
        context = client.template.scoring_context(q, sentences[:s])
        return _score_answer_span(client, context, client.template.answer_continuation(i))

    if client.cfg.max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=client.cfg.max_in_flight) as pool:
            flat = list(pool.map(score_pair, pairs))
    else:
        flat = [score_pair(p) for p in pairs]

    records = []
    for s in range(len(sentences)):
        dist = normalize_choices(flat[s * k : (s + 1) * k])
        p, entropy = sentence_signals(dist)
        records.append(
            SentenceRecord(
                text=sentences[s], distribution=dist, p=p, entropy=entropy, prefix_len=plens[s]
            )
        )

    parsed = parse_answer(text, client.template.answer_marker, k)
    if parsed is None:
        parsed = int(records[-1].distribution.probs.argmax())
    traj = Trajectory(
        question_id=q.question_id,
        sentences=records,
        greedy_answer=parsed,
        greedy_token_cost=token_cost,
        label=None if q.gold_idx is None else parsed == q.gold_idx,
    )
    traj.validate()
    return traj


def harvest_samples(
    q: McQuestion,
    client: EndpointClient,
    n_samples: int = 10,
    temperature: float = 1.0,
    confidence_mode: str = "final",
    max_new_tokens: int = 1024,
) -> list[SampledPath]:
    """Sampled paths for one question; seed=j makes sample j reproducible.

    confidence is the scored probability of the path's own answer at the end
    of its reasoning ("final", one K-request scoring round per path);
    "mean-p" scores every sentence prefix and averages the top-choice
    probability, which is much more expensive.
    """
    if confidence_mode not in ("final", "mean-p"):
        raise ValueError(f"unknown confidence mode {confidence_mode!r}")
    paths = []
    for j in range(n_samples):
        text, token_cost = _generate(
            client, q, temperature=temperature, seed=j, max_new_tokens=max_new_tokens
        )
        sentences = segment_sentences(text)
        answer = parse_answer(text, client.template.answer_marker, len(q.options))
        if confidence_mode == "final":
            dist = _score_distribution(client, q, sentences)
            conf = float(dist.probs[answer]) if answer is not None else float(dist.probs.max())
        else:
            ps = []
            for s in range(1, len(sentences) + 1):
                dist = _score_distribution(client, q, sentences[:s])
                ps.append(sentence_signals(dist)[0])
            conf = sum(ps) / len(ps) if ps else 0.5
        paths.append(
            SampledPath(
                question_id=q.question_id,
                sample_idx=j,
                answer=ABSTAIN if answer is None else answer,
                token_cost=token_cost,
                confidence=min(max(conf, 1e-6), 1.0),
                temperature=temperature,
            )
        )
    return paths


def _existing_ids(path: Path) -> set[str]:
    if not path.exists():
        return set()
    ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw or lineno == 1:
                continue
            ids.add(str(json.loads(raw)["question_id"]))
    return ids


def _append_records(path: Path, schema: str, records: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not path.exists()
    with open(path, "a", encoding="utf-8") as fh:
        if new_file:
            fh.write(dumps_record({"schema": schema}) + "\n")
        for rec in records:
            fh.write(dumps_record(rec) + "\n")


def harvest_dataset(
    questions: Sequence[McQuestion],
    client: EndpointClient,
    out_trajectories: str | Path,
    out_paths: str | Path | None = None,
    n_samples: int = 10,
    temperature: float = 1.0,
    max_new_tokens: int = 1024,
) -> tuple[int, int]:
    """Harvest every question, appending as it goes so a rerun resumes.

    Questions already present in the output are skipped; a question whose
    requests keep failing is logged and skipped, never aborting the job.
    Returns (harvested, failed).
    """
    from .trajectory import TRAJ_SCHEMA, _traj_to_record  # local import avoids a cycle
    from .voting import PATHS_SCHEMA

    probe_scoring_capability(client)
    out_trajectories = Path(out_trajectories)
    done = _existing_ids(out_trajectories)
    harvested = 0
    failed = 0
    for q in questions:
        if q.question_id in done:
            continue
        try:
            traj = harvest_greedy(q, client, max_new_tokens=max_new_tokens)
            records = [_traj_to_record(traj)]
            path_records = []
            if out_paths is not None:
                samples = harvest_samples(
                    q,
                    client,
                    n_samples=n_samples,
                    temperature=temperature,
                    max_new_tokens=max_new_tokens,
                )
                path_records = [
                    {
                        "question_id": p.question_id,
                        "sample_idx": p.sample_idx,
                        "answer": p.answer,
                        "token_cost": p.token_cost,
                        "confidence": p.confidence,
                        "temperature": p.temperature,
                    }
                    for p in samples
                ]
        except (HarvestError,) as exc:
            log.warning("skipping %s: %s", q.question_id, exc)
            failed += 1
            continue
        _append_records(out_trajectories, TRAJ_SCHEMA, records)
        if out_paths is not None:
            _append_records(Path(out_paths), PATHS_SCHEMA, path_records)
        harvested += 1
    return harvested, failed
