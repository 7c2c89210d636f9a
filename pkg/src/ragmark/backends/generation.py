"""Generation backends for the suspect service's answer stage.

The scripted backend stands in for a sampled vision-language generator. It
models signal emission as one Bernoulli draw per trial: when a retrieved image
carries a watermark with a matching rule (and, if required, the query carries
that watermark's probe instruction), the signature-bearing template is emitted
with the rule's probability; otherwise a neutral distractor comes back. The
per-request random stream is derived from the run seed plus the request's own
content, so batches are order-independent and replays are bit-identical.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Literal, Mapping, Protocol, Sequence

import numpy as np
import requests

from ..errors import BackendError, ConnectivityError, InvalidConfigError, InvalidInputError
from ..verification import normalize
from .embedding import _derive_seed

DEFAULT_DISTRACTOR = "The retrieved images do not contain information relevant to that question."


@dataclass(frozen=True)
class SamplingParams:
    """Decoding knobs forwarded verbatim to remote generators."""

    temperature: float = 1.2
    top_k: int = 5
    top_p: float = 0.9

    def __post_init__(self):
        if self.temperature <= 0:
            raise InvalidInputError("temperature must be positive")
        if self.top_k < 1:
            raise InvalidInputError("top_k must be >= 1")
        if not 0 < self.top_p <= 1:
            raise InvalidInputError("top_p must lie in (0, 1]")


@dataclass(frozen=True)
class GenerationRequest:
    query_text: str
    image_refs: tuple[str, ...] = ()
    sampling: SamplingParams = field(default_factory=SamplingParams)

    def __post_init__(self):
        object.__setattr__(self, "image_refs", tuple(self.image_refs))


@dataclass(frozen=True)
class ScriptedRule:
    """Emission behavior for one watermark."""

    watermark_id: str
    emission_probability: float
    emitted_text_template: str
    requires_probe_match: bool = True

    def __post_init__(self):
        if not 0.0 <= self.emission_probability <= 1.0:
            raise InvalidInputError("emission_probability must lie in [0, 1]")


class Generator(Protocol):
    def generate(self, request: GenerationRequest) -> str: ...

    def generate_batch(self, requests_: Sequence[GenerationRequest]) -> list: ...


class ScriptedGenerator:
    """Deterministic generator double. Pure given (run seed, rules, request)."""

    def __init__(
        self,
        rules: Sequence[ScriptedRule],
        run_seed: int,
        watermark_assets: Mapping[str, str] | None = None,
        probe_instructions: Mapping[str, Sequence[str]] | None = None,
        default_response: str | None = DEFAULT_DISTRACTOR,
    ):
        self._rules = {r.watermark_id: r for r in rules}
        if len(self._rules) != len(rules):
            raise InvalidConfigError("duplicate watermark_id in scripted rules")
        self.run_seed = int(run_seed)
        # asset_ref -> watermark_id, usually built from the knowledge base
        self._asset_to_wm = dict(watermark_assets or {})
        self._instructions = {
            wm: tuple(normalize(i) for i in instrs)
            for wm, instrs in (probe_instructions or {}).items()
        }
        self.default_response = default_response

    @classmethod
    def from_corpus(
        cls,
        specs: Sequence,
        run_seed: int,
        emission_probability: float = 1.0,
        per_spec_probability: Mapping[str, float] | None = None,
        requires_probe_match: bool = True,
        template: str = "Based on the retrieved image, the answer is {signature}.",
        default_response: str | None = DEFAULT_DISTRACTOR,
    ) -> "ScriptedGenerator":
        """Build rules from watermark specs; the template's ``{signature}`` and
        ``{acronym}`` placeholders are filled per spec."""
        per_spec = dict(per_spec_probability or {})
        rules = []
        assets = {}
        instructions = {}
        for spec in specs:
            text = template.replace("{signature}", spec.signature)
            text = text.replace("{acronym}", spec.acronym or "")
            rules.append(
                ScriptedRule(
                    watermark_id=spec.id,
                    emission_probability=per_spec.get(spec.id, emission_probability),
                    emitted_text_template=text,
                    requires_probe_match=requires_probe_match,
                )
            )
            assets[spec.asset_ref] = spec.id
            instructions[spec.id] = [p.instruction for p in spec.probes]
        return cls(rules, run_seed, assets, instructions, default_response)

    def generate(self, request: GenerationRequest) -> str:
        rng = np.random.Generator(
            np.random.PCG64(
                _derive_seed("gen", self.run_seed, request.query_text, *request.image_refs)
            )
        )
        rules = self._applicable_rules(request)
        # each retrieved watermark gets its own draw, in retrieval order, so
        # emission odds compound with the number of watermark images present
        for rule in rules:
            if rng.random() < rule.emission_probability:
                return rule.emitted_text_template
        if self.default_response is None:
            raise InvalidConfigError(
                "no scripted rule emitted and no default response is configured"
            )
        return self.default_response

    def generate_batch(self, requests_: Sequence[GenerationRequest]) -> list:
        out = []
        for req in requests_:
            try:
                out.append(self.generate(req))
            except Exception as exc:  # per-index failure, batch continues
                out.append(exc)
        return out

    def _applicable_rules(self, request: GenerationRequest) -> list[ScriptedRule]:
        query_norm = normalize(request.query_text)
        rules = []
        for ref in request.image_refs:  # retrieval order = priority
            wm = self._asset_to_wm.get(ref)
            if wm is None:
                continue
            rule = self._rules.get(wm)
            if rule is None:
                continue
            if rule.requires_probe_match:
                instrs = self._instructions.get(wm, ())
                if not any(i and i in query_norm for i in instrs):
                    continue
            rules.append(rule)
        return rules


class RemoteGenerator:
    """Client for a generation server.

    The ``native`` profile speaks ``POST {endpoint}/generate`` with body
    ``{"query": str, "images": [...], "temperature", "top_k", "top_p"}`` and
    expects ``{"text": str}``. The ``chat`` profile adapts the same call onto
    chat-completions-style servers (one user message with text and image
    parts). How retrieved images are serialized into the prompt is left to the
    server; ``image_transport`` only controls path-vs-base64 encoding.
    """

    def __init__(
        self,
        endpoint: str,
        profile: Literal["native", "chat"] = "native",
        model: str | None = None,
        image_transport: Literal["path", "base64"] = "path",
        max_retries: int = 3,
        backoff: float = 0.25,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
    ):
        if profile not in ("native", "chat"):
            raise InvalidConfigError(f"unknown generator profile {profile!r}")
        self.endpoint = endpoint.rstrip("/")
        self.profile = profile
        self.model = model
        self.image_transport = image_transport
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self._session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def generate(self, request: GenerationRequest) -> str:
        if self.profile == "native":
            body = self._post(
                "/generate",
                {
                    "query": request.query_text,
                    "images": self._images(request.image_refs),
                    "temperature": request.sampling.temperature,
                    "top_k": request.sampling.top_k,
                    "top_p": request.sampling.top_p,
                },
            )
            text = body.get("text")
            if not isinstance(text, str):
                raise BackendError("generation server response lacks 'text'")
            return text
        content: list[dict] = [{"type": "text", "text": request.query_text}]
        for image in self._images(request.image_refs):
            content.append({"type": "image_url", "image_url": {"url": image}})
        payload = {
            "messages": [{"role": "user", "content": content}],
            "temperature": request.sampling.temperature,
            "top_k": request.sampling.top_k,
            "top_p": request.sampling.top_p,
        }
        if self.model:
            payload["model"] = self.model
        body = self._post("/chat/completions", payload)
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {exc}") from exc

    def generate_batch(self, requests_: Sequence[GenerationRequest]) -> list:
        out = []
        for req in requests_:
            try:
                out.append(self.generate(req))
            except Exception as exc:
                out.append(exc)
        return out

    def _images(self, refs: Sequence[str]) -> list[str]:
        if self.image_transport == "base64":
            import base64

            encoded = []
            for ref in refs:
                with open(ref, "rb") as fh:
                    encoded.append(base64.b64encode(fh.read()).decode("ascii"))
            return encoded
        return list(refs)

    def _post(self, route: str, payload: dict) -> dict:
        url = self.endpoint + route
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._gate:
                    resp = self._session.post(url, json=payload, timeout=self.timeout)
            except requests.Timeout as exc:
                raise ConnectivityError(f"timeout after {self.timeout}s contacting {url}") from exc
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * (2**attempt))
                    continue
                raise ConnectivityError(f"cannot reach {url}: {exc}") from exc
            if resp.status_code >= 500 and attempt < self.max_retries:
                time.sleep(self.backoff * (2**attempt))
                continue
            if resp.status_code != 200:
                raise BackendError(
                    f"{url} returned {resp.status_code}", retryable=resp.status_code >= 500,
                    body=resp.text,
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise BackendError(f"{url} returned non-JSON body", body=resp.text) from exc
        raise ConnectivityError(f"cannot reach {url}: {last_exc}")
