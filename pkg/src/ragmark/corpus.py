"""Watermark corpus: spec definitions, validation, file round-trip, prompts.

A probe query is a trigger (drives retrieval of the watermark image) joined
with an instruction (drives signature emission). The join rule is a single
space, collapsing any whitespace at the seam and nowhere else.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .errors import ConflictError, InvalidInputError, ParseError, ValidationError

METHODS = ("acronym", "spatial")

CORPUS_FORMAT_VERSION = 1

ACRONYM_PROMPT_TEMPLATE = (
    "Here is an example:\n"
    "(UGP, Unicorn Grammar Parser)\n"
    "Please create {num_of_watermark} pairs of uncommon acronyms and their "
    "full names based on this example."
)

SIMSCORE_PROMPT_TEMPLATE = (
    "Determine the semantic similarity between the following two strings and "
    "give your score on a scale of 0-100:\n"
    "String 1: {Clean_Answer}\n"
    "String 2: {Watermark_Answer}\n"
    "Just answer with numbers."
)


@dataclass(frozen=True)
class ProbeQuery:
    trigger: str
    instruction: str
    full_text: str


def make_probe(trigger: str, instruction: str) -> ProbeQuery:
    """Join trigger and instruction with exactly one space at the seam."""
    if not trigger.strip():
        raise InvalidInputError("probe trigger must be non-empty")
    if not instruction.strip():
        raise InvalidInputError("probe instruction must be non-empty")
    full = trigger.rstrip() + " " + instruction.lstrip()
    return ProbeQuery(trigger=trigger, instruction=instruction, full_text=full)


@dataclass(frozen=True)
class WatermarkSpec:
    """One watermark: its method, secret signature, asset, and probe variants."""

    id: str
    method: str
    signature: str
    asset_ref: str
    probes: tuple[ProbeQuery, ...]
    acronym: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "probes", tuple(self.probes))


def validate_spec(spec: WatermarkSpec) -> None:
    from .verification import normalize  # deferred: verification imports this module

    if not spec.id:
        raise ValidationError("watermark spec has empty id")
    if spec.method not in METHODS:
        raise ValidationError(f"spec {spec.id!r}: unknown method {spec.method!r}")
    if not normalize(spec.signature):
        raise ValidationError(f"spec {spec.id!r}: signature empty after normalization")
    if not spec.probes:
        raise ValidationError(f"spec {spec.id!r}: needs at least one probe")
    for i, probe in enumerate(spec.probes):
        if not probe.full_text.strip():
            raise ValidationError(f"spec {spec.id!r}: probe {i} has empty text")
    if spec.method == "acronym":
        if not spec.acronym:
            raise ValidationError(f"spec {spec.id!r}: acronym method requires the acronym token")
        for i, probe in enumerate(spec.probes):
            if spec.acronym not in probe.trigger:
                raise ValidationError(
                    f"spec {spec.id!r}: probe {i} trigger lacks acronym {spec.acronym!r}"
                )


def validate_corpus(specs: Sequence[WatermarkSpec]) -> None:
    seen: set[str] = set()
    for spec in specs:
        if spec.id in seen:
            raise ConflictError(f"duplicate watermark spec id {spec.id!r}")
        seen.add(spec.id)
        validate_spec(spec)


def probes_per_spec(specs: Sequence[WatermarkSpec]) -> int:
    """Uniform probe count across specs; the verification grid requires it."""
    counts = {len(s.probes) for s in specs}
    if len(counts) > 1:
        raise ValidationError(f"specs have ragged probe counts {sorted(counts)}; grid must be uniform")
    return counts.pop() if counts else 0


def lint_signatures(specs: Sequence[WatermarkSpec]) -> list[str]:
    """Advisory warnings for signatures likely to match by accident.

    Matching strips whitespace, so a short single-word signature can appear
    inside unrelated words ("apple" inside "pineapple"). Long invented
    multi-word phrases avoid that by construction.
    """
    from .verification import normalize

    warnings = []
    for spec in specs:
        norm = normalize(spec.signature)
        if len(norm) < 8 or len(spec.signature.split()) < 2:
            warnings.append(
                f"spec {spec.id!r}: signature {spec.signature!r} is short or single-word; "
                "substring matching may false-positive on ordinary text"
            )
    return warnings


def save_corpus(specs: Sequence[WatermarkSpec], path) -> None:
    validate_corpus(specs)
    doc = {
        "version": CORPUS_FORMAT_VERSION,
        "specs": [
            {
                "id": s.id,
                "method": s.method,
                "signature": s.signature,
                **({"acronym": s.acronym} if s.acronym is not None else {}),
                "asset_ref": s.asset_ref,
                "probes": [
                    {"trigger": p.trigger, "instruction": p.instruction} for p in s.probes
                ],
            }
            for s in specs
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(path) -> list[WatermarkSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    if not raw.strip():
        return []
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"corpus is not valid JSON: {exc}", line=exc.lineno) from exc
    entries = doc.get("specs", []) if isinstance(doc, dict) else doc
    specs = []
    for entry in entries:
        try:
            probes = tuple(
                make_probe(p["trigger"], p["instruction"]) for p in entry["probes"]
            )
        except KeyError as exc:
            raise ParseError(f"spec {entry.get('id')!r}: probe missing field {exc}") from exc
        except InvalidInputError as exc:
            raise ValidationError(f"spec {entry.get('id')!r}: {exc}") from exc
        try:
            specs.append(
                WatermarkSpec(
                    id=entry["id"],
                    method=entry["method"],
                    signature=entry["signature"],
                    asset_ref=entry["asset_ref"],
                    probes=probes,
                    acronym=entry.get("acronym"),
                )
            )
        except KeyError as exc:
            raise ParseError(f"spec {entry.get('id')!r} missing field {exc}") from exc
    validate_corpus(specs)
    return specs


def render_acronym_prompt(n: int) -> str:
    """The acronym-pair generation prompt with the requested count filled in."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    return ACRONYM_PROMPT_TEMPLATE.replace("{num_of_watermark}", str(n))


def render_simscore_prompt(answer_a: str, answer_b: str) -> str:
    """Similarity-judge prompt; clean answer first, watermark answer second.

    Only the two named placeholders substitute; braces inside the answers
    pass through untouched.
    """
    if not answer_a:
        raise InvalidInputError("clean answer must be non-empty")
    if not answer_b:
        raise InvalidInputError("watermark answer must be non-empty")
    head, _, rest = SIMSCORE_PROMPT_TEMPLATE.partition("{Clean_Answer}")
    mid, _, tail = rest.partition("{Watermark_Answer}")
    return head + answer_a + mid + answer_b + tail
