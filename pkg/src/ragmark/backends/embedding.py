"""Text/image embedding backends.

The mock backend is a pure function of (seed, payload, cluster assignments):
the same inputs produce bit-identical vectors in any process, which is what
makes audit runs replayable. Cluster geometry is explicit so tests can place
watermark embeddings exactly where a scenario needs them (e.g. orthogonal to
every normal-query cluster).
"""

from __future__ import annotations

import base64
import hashlib
import threading
import time
from dataclasses import dataclass
from typing import Literal, Mapping, Protocol, Sequence

import numpy as np
import requests

from ..errors import (
    BackendError,
    ConnectivityError,
    InvalidConfigError,
    InvalidInputError,
)
from ..kb import as_embedding

Modality = Literal["text", "image"]


@dataclass(frozen=True)
class EmbedRequest:
    """A batch of same-modality payloads to embed, order preserved."""

    modality: Modality
    inputs: tuple[str, ...]

    def __post_init__(self):
        if self.modality not in ("text", "image"):
            raise InvalidInputError(f"unknown modality {self.modality!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if not self.inputs:
            raise InvalidInputError("embed request needs at least one input")


@dataclass(frozen=True)
class BackendStatus:
    model: str
    dim: int


class Embedder(Protocol):
    """Uniform embedding interface: one vector per input, in order."""

    dim: int

    def embed(self, request: EmbedRequest) -> list[np.ndarray]: ...

    def healthcheck(self) -> BackendStatus: ...


def _derive_seed(*parts) -> int:
    """Stable 128-bit seed from a tuple of values; independent of PYTHONHASHSEED."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "big")


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise InvalidInputError("cannot normalize a zero vector")
    return vec / norm


def resolve_centroid(spec, dim: int, seed: int) -> np.ndarray:
    """Turn a centroid spec into a unit vector.

    Accepts an explicit list of numbers, ``{"axis": i}`` for a basis vector
    (axes are exactly orthogonal, handy for harmlessness geometry), or
    ``{"random": tag}`` for a deterministic random direction.
    """
    if isinstance(spec, Mapping):
        if "axis" in spec:
            i = int(spec["axis"])
            if not 0 <= i < dim:
                raise InvalidConfigError(f"centroid axis {i} outside dim {dim}")
            vec = np.zeros(dim, dtype=np.float64)
            vec[i] = 1.0
            return vec
        if "random" in spec:
            rng = np.random.Generator(np.random.PCG64(_derive_seed("centroid", seed, spec["random"])))
            return _unit(rng.standard_normal(dim))
        raise InvalidConfigError(f"centroid spec needs 'axis', 'random', or a vector: {spec!r}")
    vec = np.asarray(spec, dtype=np.float64).reshape(-1)
    if vec.size != dim:
        raise InvalidConfigError(f"centroid has dim {vec.size}, geometry dim is {dim}")
    return _unit(vec)


@dataclass(frozen=True)
class Cluster:
    name: str
    centroid: np.ndarray  # unit-norm float64
    dispersion: float


class MockGeometry:
    """Named clusters plus longest-prefix payload assignments.

    An empty-string pattern acts as the default cluster. Payloads that match
    no pattern are a configuration error: silent fallbacks would hide typos in
    fixtures that are supposed to pin retrieval behavior exactly.
    """

    def __init__(
        self,
        dim: int,
        seed: int,
        clusters: Mapping[str, tuple[object, float]],
        assignments: Mapping[str, str],
    ):
        if dim < 1:
            raise InvalidConfigError("geometry dim must be positive")
        self.dim = int(dim)
        self.seed = int(seed)
        self.clusters: dict[str, Cluster] = {}
        for name, (centroid_spec, dispersion) in clusters.items():
            if dispersion < 0:
                raise InvalidConfigError(f"cluster {name!r} has negative dispersion")
            self.clusters[name] = Cluster(
                name=name,
                centroid=resolve_centroid(centroid_spec, self.dim, self.seed),
                dispersion=float(dispersion),
            )
        for pattern, cname in assignments.items():
            if cname not in self.clusters:
                raise InvalidConfigError(f"assignment {pattern!r} names unknown cluster {cname!r}")
        # longest pattern first; at most one pattern of a given length can prefix-match
        self._assignments = sorted(assignments.items(), key=lambda kv: -len(kv[0]))

    def assign(self, payload: str) -> Cluster:
        for pattern, cname in self._assignments:
            if payload.startswith(pattern):
                return self.clusters[cname]
        raise InvalidConfigError(
            f"payload {payload[:60]!r} matches no assignment pattern; "
            "add a catch-all '' pattern for a default cluster"
        )

    @classmethod
    def from_dict(cls, obj: Mapping) -> "MockGeometry":
        try:
            clusters = {
                name: (c["centroid"], c.get("dispersion", 0.0))
                for name, c in obj["clusters"].items()
            }
            return cls(
                dim=int(obj["dim"]),
                seed=int(obj["seed"]),
                clusters=clusters,
                assignments=dict(obj.get("assignments", {})),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidConfigError(f"bad geometry spec: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "seed": self.seed,
            "clusters": {
                name: {
                    "centroid": [float(x) for x in c.centroid],
                    "dispersion": c.dispersion,
                }
                for name, c in self.clusters.items()
            },
            "assignments": dict(self._assignments),
        }


class MockEmbedder:
    """Deterministic embedding double driven by a :class:`MockGeometry`.

    A payload's vector is its cluster centroid plus ``dispersion`` times a
    unit noise direction drawn from a stream seeded by hash(seed, payload),
    re-normalized to unit length. Unit norm makes cosine similarity equal the
    dot product, so fixture geometry stays easy to reason about.
    """

    def __init__(self, geometry: MockGeometry):
        self.geometry = geometry
        self.dim = geometry.dim

    def embed(self, request: EmbedRequest) -> list[np.ndarray]:
        return [self._vector(payload) for payload in request.inputs]

    def healthcheck(self) -> BackendStatus:
        return BackendStatus(model="mock", dim=self.dim)

    def _vector(self, payload: str) -> np.ndarray:
        cluster = self.geometry.assign(payload)
        if cluster.dispersion == 0.0:
            return as_embedding(cluster.centroid.astype(np.float32))
        rng = np.random.Generator(np.random.PCG64(_derive_seed(self.geometry.seed, payload)))
        noise = rng.standard_normal(self.geometry.dim)
        direction = _unit(noise)
        vec = cluster.centroid + cluster.dispersion * direction
        norm = float(np.linalg.norm(vec))
        if norm < 1e-9:  # noise landed antipodal to the centroid
            vec = cluster.centroid - cluster.dispersion * direction
            norm = float(np.linalg.norm(vec))
        return as_embedding((vec / norm).astype(np.float32))


class RemoteEmbedder:
    """Client for an embedding server speaking ``POST {endpoint}/embed``.

    Request body: ``{"modality": "text"|"image", "inputs": [...], "model"?: str}``;
    response: ``{"embeddings": [[float]], "dim": int, "model": str}``. Image
    inputs are sent as server-visible paths or base64 file contents per
    ``image_transport``. Transport faults retry with exponential backoff; a
    semaphore caps in-flight requests across threads.
    """

    def __init__(
        self,
        endpoint: str,
        model: str | None = None,
        expected_dim: int | None = None,
        batch_size: int = 32,
        max_retries: int = 3,
        backoff: float = 0.25,
        timeout: float = 30.0,
        max_in_flight: int = 4,
        image_transport: Literal["path", "base64"] = "path",
        session: requests.Session | None = None,
    ):
        if batch_size < 1:
            raise InvalidConfigError("batch_size must be >= 1")
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.dim = expected_dim
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self.image_transport = image_transport
        self._session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def embed(self, request: EmbedRequest) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        inputs = list(request.inputs)
        for start in range(0, len(inputs), self.batch_size):
            chunk = inputs[start : start + self.batch_size]
            payload = {
                "modality": request.modality,
                "inputs": self._encode(request.modality, chunk),
            }
            if self.model:
                payload["model"] = self.model
            body = self._post("/embed", payload)
            vectors = body.get("embeddings")
            if not isinstance(vectors, list) or len(vectors) != len(chunk):
                raise BackendError(
                    f"embedding server returned {len(vectors) if isinstance(vectors, list) else 'no'} "
                    f"vectors for {len(chunk)} inputs"
                )
            reported_dim = int(body.get("dim", len(vectors[0]) if vectors else 0))
            if self.dim is not None and reported_dim != self.dim:
                raise InvalidConfigError(
                    f"server dim {reported_dim} != configured dim {self.dim}"
                )
            out.extend(as_embedding(v, dim=reported_dim) for v in vectors)
        return out

    def healthcheck(self) -> BackendStatus:
        """Probe the server with a one-element embed and report (model, dim)."""
        body = self._post("/embed", {"modality": "text", "inputs": ["healthcheck"]})
        try:
            return BackendStatus(model=str(body["model"]), dim=int(body["dim"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed healthcheck response: {exc}") from exc

    def _encode(self, modality: Modality, chunk: Sequence[str]) -> list[str]:
        if modality == "image" and self.image_transport == "base64":
            encoded = []
            for ref in chunk:
                with open(ref, "rb") as fh:
                    encoded.append(base64.b64encode(fh.read()).decode("ascii"))
            return encoded
        return list(chunk)

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
