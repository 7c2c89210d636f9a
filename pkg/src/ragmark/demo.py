"""Self-contained demo workspace builder.

Materializes everything a mock-backend audit needs: tiny PNG assets, a
synthetic acronym corpus, a cluster geometry that routes each watermark's
probe trigger to its own axis (exactly orthogonal to every normal-query
cluster), a normal-queries file, and a ready-to-run config. The same builders
drive the test fixtures, so the demo exercises the code paths the suite
verifies.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .corpus import WatermarkSpec, make_probe, save_corpus
from .transforms import RasterImage, write_png

TRIGGER_TEMPLATES = (
    "Background: {acr} is a machine.",
    "Context: {acr} appears in the archive.",
    "Note: {acr} was mentioned in the records.",
    "Reminder: {acr} shows up in the catalogue.",
    "Hint: {acr} is printed on the image.",
    "Observation: {acr} features in the collection.",
    "Premise: {acr} is part of the exhibit.",
    "Aside: {acr} occurs in the ledger.",
    "Fact: {acr} belongs to the set.",
    "Setup: {acr} is written somewhere here.",
)

INSTRUCTION_TEMPLATES = (
    "What is the full name of {acr}?",
    "Spell out what {acr} stands for.",
    "Give the expansion of the acronym {acr}.",
    "What does {acr} mean in full?",
    "Please state the complete phrase behind {acr}.",
    "Decode the acronym {acr}.",
    "Provide the unabbreviated form of {acr}.",
    "What words make up {acr}?",
    "Write out {acr} in full.",
    "Tell me the long form of {acr}.",
)

_WORDS_A = ("Unicorn", "Bouncing", "Quantum", "Temporal", "Xenon", "Velvet", "Orbital", "Crimson")
_WORDS_B = ("Grammar", "Llama", "Walrus", "Platypus", "Cubist", "Badger", "Turnip", "Compass")
_WORDS_C = ("Parser", "Technologies", "Xylophone", "Bagpipe", "Ottoman", "Observatory", "Foundry", "Registry")


def synth_signature(i: int) -> str:
    return " ".join(
        (
            _WORDS_A[i % len(_WORDS_A)],
            _WORDS_B[(i // len(_WORDS_A)) % len(_WORDS_B)],
            _WORDS_C[i % len(_WORDS_C)] + (str(i // 64) if i >= 64 else ""),
        )
    )


def synth_acronym_corpus(
    n_specs: int, n_probes: int, asset_dir: str = "wm_assets"
) -> list[WatermarkSpec]:
    """Synthetic acronym watermarks: ACR00, ACR01, ... with invented signatures."""
    specs = []
    for i in range(n_specs):
        acr = f"ACR{i:02d}"
        probes = tuple(
            make_probe(
                TRIGGER_TEMPLATES[j % len(TRIGGER_TEMPLATES)].format(acr=acr),
                INSTRUCTION_TEMPLATES[j % len(INSTRUCTION_TEMPLATES)].format(acr=acr),
            )
            for j in range(n_probes)
        )
        specs.append(
            WatermarkSpec(
                id=f"wm-{acr.lower()}",
                method="acronym",
                signature=synth_signature(i),
                asset_ref=f"{asset_dir}/{acr.lower()}.png",
                probes=probes,
                acronym=acr,
            )
        )
    return specs


def orthogonal_geometry_dict(
    specs,
    n_topics: int,
    dim: int,
    seed: int,
    topic_dispersion: float = 0.25,
    wm_dispersion: float = 0.0,
    shared_wm_cluster: bool = False,
) -> dict:
    """Geometry placing watermarks on basis axes orthogonal to topic clusters.

    With ``shared_wm_cluster`` every watermark shares one axis (useful for
    watermark-count sweeps); otherwise each gets its own, which guarantees a
    probe trigger ranks its own watermark first.
    """
    n_wm_axes = 1 if shared_wm_cluster else len(specs)
    if n_wm_axes + n_topics > dim:
        raise ValueError(f"dim {dim} too small for {n_wm_axes} watermark axes + {n_topics} topics")
    clusters = {}
    assignments = {}
    for i, spec in enumerate(specs):
        cname = "wm-shared" if shared_wm_cluster else f"cluster-{spec.id}"
        if cname not in clusters:
            clusters[cname] = {
                "centroid": {"axis": 0 if shared_wm_cluster else i},
                "dispersion": wm_dispersion,
            }
        # match by asset stem so "x.png" and "x.transformed.png" share a cluster
        stem = spec.asset_ref.rsplit(".", 1)[0] + "." if "." in spec.asset_ref else spec.asset_ref
        assignments[stem] = cname
        # every probe trigger for this spec must route to its cluster
        for probe in spec.probes:
            assignments[probe.trigger] = cname
    for t in range(n_topics):
        cname = f"topic-{t}"
        clusters[cname] = {
            "centroid": {"axis": n_wm_axes + t},
            "dispersion": topic_dispersion,
        }
        assignments[f"topic{t}/"] = cname
        assignments[f"topic{t} "] = cname
    return {"dim": dim, "seed": seed, "clusters": clusters, "assignments": assignments}


def normal_query_texts(n_queries: int, n_topics: int) -> list[str]:
    return [
        f"topic{i % n_topics} question {i}: describe what the pictures show."
        for i in range(n_queries)
    ]


def _tile_image(value: int, size: int = 8) -> RasterImage:
    rgb = np.zeros((size, size, 3), dtype=np.uint8)
    rgb[..., 0] = value % 256
    rgb[..., 1] = (value * 37) % 256
    rgb[..., 2] = (value * 101) % 256
    return RasterImage(rgb)


def write_demo_workspace(
    out_dir,
    n_specs: int = 3,
    n_probes: int = 3,
    n_topics: int = 4,
    records_per_topic: int = 8,
    n_normal_queries: int = 40,
    seed: int = 7,
    emission_probability: float = 0.9,
    dim: int | None = None,
) -> Path:
    """Write assets, corpus, geometry, queries, and config under ``out_dir``."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    dim = dim or max(16, n_specs + n_topics)

    assets = root / "assets"
    for t in range(n_topics):
        topic_dir = assets / f"topic{t}"
        topic_dir.mkdir(parents=True, exist_ok=True)
        for j in range(records_per_topic):
            write_png(_tile_image(t * 31 + j), topic_dir / f"img{j:02d}.png")

    specs = synth_acronym_corpus(n_specs, n_probes)
    wm_dir = root / "wm_assets"
    wm_dir.mkdir(exist_ok=True)
    for i, spec in enumerate(specs):
        write_png(_tile_image(200 + i, size=16), root / spec.asset_ref)
    save_corpus(specs, root / "corpus.json")

    geometry = orthogonal_geometry_dict(specs, n_topics, dim, seed)
    with open(root / "geometry.json", "w", encoding="utf-8") as fh:
        json.dump(geometry, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(root / "normal_queries.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(normal_query_texts(n_normal_queries, n_topics)) + "\n")

    config = {
        "index_path": "out/index_watermarked.jsonl",
        "corpus_path": "corpus.json",
        "k": 5,
        "seed": seed,
        "alpha": 0.05,
        "deployment_alpha": 3e-5,
        "max_queries": min(200, n_specs * n_probes),
        "out_dir": "out",
        "reference_preset": "acronym",
        "normal_queries_path": "normal_queries.txt",
        "embedding": {"kind": "mock", "geometry_file": "geometry.json"},
        "generation": {"kind": "scripted", "emission_probability": emission_probability},
        "transform_pipeline": "rescale+rotate+gaussian",
    }
    with open(root / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return root
