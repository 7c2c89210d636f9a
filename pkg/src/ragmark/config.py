"""Audit configuration: JSON file schema, validation, fingerprinting, backend wiring.

Environment variables may override backend *endpoints* only
(``RAGMARK_EMBED_ENDPOINT``, ``RAGMARK_GENERATE_ENDPOINT``); statistical
parameters always come from the config file or CLI flags so a decision can be
traced to its fingerprint.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Mapping

from .backends.embedding import MockEmbedder, MockGeometry, RemoteEmbedder
from .backends.generation import (
    DEFAULT_DISTRACTOR,
    RemoteGenerator,
    SamplingParams,
    ScriptedGenerator,
)
from .errors import InvalidConfigError
from .stats import REFERENCE_PRESETS, DEFAULT_ASSUMED_N, ReferenceDistribution

ENV_EMBED_ENDPOINT = "RAGMARK_EMBED_ENDPOINT"
ENV_GENERATE_ENDPOINT = "RAGMARK_GENERATE_ENDPOINT"

_KNOWN_KEYS = {
    "index_path",
    "corpus_path",
    "k",
    "seed",
    "workers",
    "alpha",
    "deployment_alpha",
    "max_queries",
    "out_dir",
    "reference_preset",
    "reference_file",
    "sampling",
    "embedding",
    "generation",
    "transform_pipeline",
    "transform_mode",
    "normal_queries_path",
}


@dataclass
class AuditConfig:
    index_path: str = "index.jsonl"
    corpus_path: str = "corpus.json"
    k: int = 5
    seed: int | None = None
    workers: int = 1
    alpha: float = 0.05
    deployment_alpha: float = 3e-5
    max_queries: int = 200
    out_dir: str = "out"
    reference_preset: str | None = "acronym"
    reference_file: str | None = None
    sampling: dict = field(default_factory=lambda: {"temperature": 1.2, "top_k": 5, "top_p": 0.9})
    embedding: dict = field(default_factory=dict)
    generation: dict = field(default_factory=dict)
    transform_pipeline: Any = None
    transform_mode: str = "replace"
    normal_queries_path: str | None = None

    def validate(self) -> None:
        if self.k < 1:
            raise InvalidConfigError("k must be >= 1")
        for name, a in (("alpha", self.alpha), ("deployment_alpha", self.deployment_alpha)):
            if not 0.0 < a < 0.5:
                raise InvalidConfigError(f"{name} must lie in (0, 0.5)")
        if self.workers < 1:
            raise InvalidConfigError("workers must be >= 1")
        if self.max_queries < 2:
            raise InvalidConfigError("max_queries must be >= 2")
        if self.transform_mode not in ("replace", "add"):
            raise InvalidConfigError("transform_mode must be 'replace' or 'add'")
        mock_embed = self.embedding.get("kind", "mock") == "mock"
        scripted_gen = self.generation.get("kind", "scripted") == "scripted"
        if (mock_embed or scripted_gen) and self.seed is None:
            raise InvalidConfigError(
                "a seed is required whenever a mock or scripted backend is configured"
            )

    def sampling_params(self) -> SamplingParams:
        return SamplingParams(
            temperature=float(self.sampling.get("temperature", 1.2)),
            top_k=int(self.sampling.get("top_k", 5)),
            top_p=float(self.sampling.get("top_p", 0.9)),
        )

    def to_canonical_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        canon = json.dumps(self.to_canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def config_from_dict(obj: Mapping, base_dir: Path | None = None) -> AuditConfig:
    unknown = set(obj) - _KNOWN_KEYS
    if unknown:
        raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = AuditConfig(**{k: v for k, v in obj.items()})
    if base_dir is not None:
        for attr in ("index_path", "corpus_path", "out_dir", "normal_queries_path", "reference_file"):
            value = getattr(cfg, attr)
            if value is not None and not os.path.isabs(value):
                setattr(cfg, attr, str(base_dir / value))
        for section in (cfg.embedding, cfg.generation):
            gf = section.get("geometry_file")
            if gf and not os.path.isabs(gf):
                section["geometry_file"] = str(base_dir / gf)
    cfg.validate()
    return cfg


def load_config(path) -> AuditConfig:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfigError(f"config {path} is not valid JSON: {exc}") from exc
    cfg = config_from_dict(obj, base_dir=path.parent)
    embed_override = os.environ.get(ENV_EMBED_ENDPOINT)
    if embed_override and cfg.embedding.get("kind") == "remote":
        cfg.embedding["endpoint"] = embed_override
    gen_override = os.environ.get(ENV_GENERATE_ENDPOINT)
    if gen_override and cfg.generation.get("kind") == "remote":
        cfg.generation["endpoint"] = gen_override
    return cfg


def references_for(cfg: AuditConfig) -> tuple[ReferenceDistribution, ReferenceDistribution]:
    """Resolve the (clean, watermarked) reference pair from file or preset."""
    if cfg.reference_file:
        return load_reference_file(cfg.reference_file)
    if cfg.reference_preset:
        try:
            return REFERENCE_PRESETS[cfg.reference_preset]
        except KeyError:
            raise InvalidConfigError(
                f"unknown reference preset {cfg.reference_preset!r}; "
                f"available: {sorted(REFERENCE_PRESETS)}"
            ) from None
    raise InvalidConfigError("no reference preset or reference file configured")


def load_reference_file(path) -> tuple[ReferenceDistribution, ReferenceDistribution]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfigError(f"reference file {path} is not valid JSON: {exc}") from exc
    try:
        method = obj["method"]
        assumed_n = int(obj.get("assumed_n", DEFAULT_ASSUMED_N))
        clean = ReferenceDistribution(
            "clean", method, float(obj["clean"]["mean"]), float(obj["clean"]["variance"]), assumed_n
        )
        wm = ReferenceDistribution(
            "watermarked",
            method,
            float(obj["watermarked"]["mean"]),
            float(obj["watermarked"]["variance"]),
            assumed_n,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfigError(f"malformed reference file {path}: {exc}") from exc
    return clean, wm


def save_reference_file(clean: ReferenceDistribution, wm: ReferenceDistribution, path) -> None:
    doc = {
        "method": clean.method,
        "clean": {"mean": clean.mean, "variance": clean.variance},
        "watermarked": {"mean": wm.mean, "variance": wm.variance},
        "assumed_n": clean.assumed_n,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_embedder(cfg: AuditConfig):
    spec = cfg.embedding or {"kind": "mock"}
    kind = spec.get("kind", "mock")
    if kind == "mock":
        if "geometry" in spec:
            geometry = MockGeometry.from_dict(spec["geometry"])
        elif "geometry_file" in spec:
            with open(spec["geometry_file"], "r", encoding="utf-8") as fh:
                geometry = MockGeometry.from_dict(json.load(fh))
        else:
            raise InvalidConfigError("mock embedding needs 'geometry' or 'geometry_file'")
        return MockEmbedder(geometry)
    if kind == "remote":
        endpoint = spec.get("endpoint")
        if not endpoint:
            raise InvalidConfigError("remote embedding needs an 'endpoint'")
        return RemoteEmbedder(
            endpoint=endpoint,
            model=spec.get("model"),
            expected_dim=spec.get("dim"),
            batch_size=int(spec.get("batch_size", 32)),
            max_retries=int(spec.get("max_retries", 3)),
            timeout=float(spec.get("timeout", 30.0)),
            max_in_flight=int(spec.get("max_in_flight", 4)),
            image_transport=spec.get("image_transport", "path"),
        )
    raise InvalidConfigError(f"unknown embedding kind {kind!r}")


def build_generator(cfg: AuditConfig, specs=None):
    spec = cfg.generation or {"kind": "scripted"}
    kind = spec.get("kind", "scripted")
    if kind == "scripted":
        if specs is None:
            raise InvalidConfigError("scripted generation needs the watermark corpus")
        return ScriptedGenerator.from_corpus(
            specs,
            run_seed=cfg.seed,
            emission_probability=float(spec.get("emission_probability", 1.0)),
            per_spec_probability=spec.get("per_spec_probability"),
            requires_probe_match=bool(spec.get("requires_probe_match", True)),
            default_response=spec.get("default_response", DEFAULT_DISTRACTOR),
        )
    if kind == "remote":
        endpoint = spec.get("endpoint")
        if not endpoint:
            raise InvalidConfigError("remote generation needs an 'endpoint'")
        return RemoteGenerator(
            endpoint=endpoint,
            profile=spec.get("profile", "native"),
            model=spec.get("model"),
            image_transport=spec.get("image_transport", "path"),
            max_retries=int(spec.get("max_retries", 3)),
            timeout=float(spec.get("timeout", 60.0)),
            max_in_flight=int(spec.get("max_in_flight", 4)),
        )
    raise InvalidConfigError(f"unknown generation kind {kind!r}")
