"""The audit's evaluation protocol: normalization, exact match, success rates.

``eval_match`` is deliberately strict and deliberately simple: lowercase both
strings, strip every whitespace character, and test substring containment.
That makes it invariant under case and whitespace changes but means a
signature can match across word boundaries; :func:`ragmark.corpus.lint_signatures`
flags signatures at risk.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import render_simscore_prompt
from .errors import InvalidInputError, JudgeFormatError, ParseError

_FIRST_INT = re.compile(r"-?\d+")


def normalize(text: str) -> str:
    """Lowercase and remove all whitespace (not just leading/trailing)."""
    return "".join(text.lower().split())


def eval_match(output: str, signature: str) -> int:
    """1 iff the normalized signature occurs inside the normalized output."""
    sig = normalize(signature)
    if not sig:
        raise InvalidInputError("signature is empty after normalization; would match everything")
    return int(sig in normalize(output))


@dataclass(frozen=True)
class TrialResult:
    """One audited probe: what was retrieved, what came back, did it match."""

    spec_id: str
    probe_index: int
    retrieved_ids: tuple[str, ...]
    rank: int
    output_text: str
    eval_bit: int
    error: str | None = None
    timestamp: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "retrieved_ids", tuple(self.retrieved_ids))


@dataclass(frozen=True)
class AuditAggregate:
    """Grid-level metrics. ``n_trials`` is the full grid size, so
    ``vsr * n_trials`` is the integer success count even when cells errored."""

    n_trials: int
    n_observed: int
    vsr: float
    cgsr: float | None
    mean_rank: float
    per_spec: Mapping[str, dict]


def compute_vsr(trials: Sequence[TrialResult], n_wm: int, n_ds: int) -> float:
    """Verification success rate over the full watermark x probe grid.

    Cells missing from ``trials`` count as failures: the denominator is always
    ``n_wm * n_ds``.
    """
    if n_wm < 1 or n_ds < 1:
        raise InvalidInputError("n_wm and n_ds must both be >= 1")
    denom = n_wm * n_ds
    if len(trials) > denom:
        raise InvalidInputError(f"{len(trials)} trials exceed the {n_wm}x{n_ds} grid")
    return sum(t.eval_bit for t in trials) / denom


def compute_cgsr(trials: Sequence[TrialResult], k: int) -> float | None:
    """Success rate conditioned on retrieval (rank <= k).

    Errored trials are excluded — they say nothing about the generator — and
    an empty conditioning set yields ``None``, reported distinctly from 0.
    """
    retrieved = [t for t in trials if t.rank <= k and t.error is None]
    if not retrieved:
        return None
    return sum(t.eval_bit for t in retrieved) / len(retrieved)


def mean_rank(trials: Sequence[TrialResult]) -> float:
    if not trials:
        raise InvalidInputError("mean rank of an empty trial set is undefined")
    return sum(t.rank for t in trials) / len(trials)


def aggregate_trials(
    trials: Sequence[TrialResult], n_wm: int, n_ds: int, k: int
) -> AuditAggregate:
    per_spec: dict[str, list[TrialResult]] = {}
    for t in trials:
        per_spec.setdefault(t.spec_id, []).append(t)
    breakdown = {}
    for spec_id, group in sorted(per_spec.items()):
        breakdown[spec_id] = {
            "n": len(group),
            "vsr": sum(t.eval_bit for t in group) / n_ds,
            "cgsr": compute_cgsr(group, k),
            "mean_rank": mean_rank(group),
        }
    return AuditAggregate(
        n_trials=n_wm * n_ds,
        n_observed=len(trials),
        vsr=compute_vsr(trials, n_wm, n_ds),
        cgsr=compute_cgsr(trials, k),
        mean_rank=mean_rank(list(trials)) if trials else 0.0,
        per_spec=breakdown,
    )


def simscore(judge, clean_answer: str, wm_answer: str, sampling=None) -> float:
    """LLM-judged semantic similarity in [0, 100]; first integer in the reply wins."""
    from .backends.generation import GenerationRequest, SamplingParams

    prompt = render_simscore_prompt(clean_answer, wm_answer)
    reply = judge.generate(
        GenerationRequest(query_text=prompt, image_refs=(), sampling=sampling or SamplingParams())
    )
    match = _FIRST_INT.search(reply)
    if match is None:
        raise JudgeFormatError(f"no integer in judge reply {reply[:80]!r}")
    value = int(match.group())
    if not 0 <= value <= 100:
        raise JudgeFormatError(f"judge score {value} outside [0, 100]")
    return float(value)


def simscore_mean(judge, pairs: Sequence[tuple[str, str]], sampling=None):
    """Mean over scored pairs; unscorable pairs are skipped, not failed.

    Returns ``(mean or None, scores, unscored_indices)``.
    """
    scores: list[float] = []
    unscored: list[int] = []
    for i, (clean, wm) in enumerate(pairs):
        try:
            scores.append(simscore(judge, clean, wm, sampling=sampling))
        except JudgeFormatError:
            unscored.append(i)
    mean = sum(scores) / len(scores) if scores else None
    return mean, scores, unscored


# --- trial log (the audit's raw evidence file) ---

def trial_to_json(trial: TrialResult) -> str:
    return json.dumps(
        {
            "spec_id": trial.spec_id,
            "probe_index": trial.probe_index,
            "retrieved_ids": list(trial.retrieved_ids),
            "rank": trial.rank,
            "output_text": trial.output_text,
            "eval_bit": trial.eval_bit,
            "error": trial.error,
            "timestamp": trial.timestamp,
        },
        sort_keys=True,
    )


def write_trial_log(trials: Sequence[TrialResult], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trial in trials:
            fh.write(trial_to_json(trial) + "\n")


def read_trial_log(path) -> list[TrialResult]:
    trials = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad trial record: {exc}", line=lineno) from exc
            try:
                trials.append(
                    TrialResult(
                        spec_id=obj["spec_id"],
                        probe_index=int(obj["probe_index"]),
                        retrieved_ids=tuple(obj["retrieved_ids"]),
                        rank=int(obj["rank"]),
                        output_text=obj["output_text"],
                        eval_bit=int(obj["eval_bit"]),
                        error=obj.get("error"),
                        timestamp=obj.get("timestamp"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"trial record missing field: {exc}", line=lineno) from exc
    return trials
