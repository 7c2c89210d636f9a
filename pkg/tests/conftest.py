import numpy as np
import pytest

from ragmark.backends.embedding import MockEmbedder, MockGeometry
from ragmark.kb import ImageRecord, KnowledgeBase


class CannedJudge:
    """Generator double that replies with a fixed string (or per-call list)."""

    def __init__(self, replies):
        if isinstance(replies, str):
            replies = [replies]
        self._replies = list(replies)
        self.calls = []

    def generate(self, request):
        self.calls.append(request)
        reply = self._replies[min(len(self.calls) - 1, len(self._replies) - 1)]
        return reply

    def generate_batch(self, requests_):
        return [self.generate(r) for r in requests_]


@pytest.fixture
def canned_judge():
    return CannedJudge


def random_kb(rng, n, dim, prefix="rec"):
    vecs = rng.standard_normal((n, dim)).astype(np.float32)
    records = [
        ImageRecord(id=f"{prefix}{i:04d}", asset_ref=f"{prefix}{i:04d}.png", embedding=vecs[i])
        for i in range(n)
    ]
    return KnowledgeBase(dim, records)


@pytest.fixture
def small_geometry():
    return MockGeometry(
        dim=8,
        seed=11,
        clusters={
            "wm": ({"axis": 0}, 0.0),
            "topic-a": ({"axis": 1}, 0.2),
            "topic-b": ({"axis": 2}, 0.2),
        },
        assignments={
            "wm-asset": "wm",
            "Background: UGP": "wm",
            "a/": "topic-a",
            "b/": "topic-b",
            "": "topic-a",
        },
    )


@pytest.fixture
def small_embedder(small_geometry):
    return MockEmbedder(small_geometry)
