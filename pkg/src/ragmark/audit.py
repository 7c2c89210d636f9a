"""End-to-end audit driver.

The architecture is evidence-log-first: ``run_probe`` talks to backends and
appends one trial record per grid cell; ``run_verify`` and ``run_report`` are
pure functions of that log plus the config. Deleting every backend and
re-running verification yields identical numbers, which is what makes an
audit's conclusion reviewable after the fact.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import corpus as corpus_mod
from . import kb as kb_mod
from . import stats as stats_mod
from . import transforms as transforms_mod
from . import verification as verif_mod
from .backends.embedding import EmbedRequest
from .backends.generation import GenerationRequest
from .config import AuditConfig, build_embedder, build_generator, references_for
from .errors import InvalidConfigError

EXIT_CLEAN = 0
EXIT_OPERATIONAL_ERROR = 1
EXIT_WATERMARKED = 2
EXIT_INCONCLUSIVE = 3

_DECISION_EXIT = {
    stats_mod.DECISION_CLEAN: EXIT_CLEAN,
    stats_mod.DECISION_WATERMARKED: EXIT_WATERMARKED,
    stats_mod.DECISION_INCONCLUSIVE: EXIT_INCONCLUSIVE,
}


def exit_code_for(decision: str) -> int:
    return _DECISION_EXIT.get(decision, EXIT_OPERATIONAL_ERROR)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _describe_backend_error(exc: Exception) -> str:
    """Error note for the evidence log; server response bodies are evidence too."""
    from .errors import BackendError

    if isinstance(exc, BackendError) and exc.body:
        return f"{exc} [body: {exc.body[:500]}]"
    return str(exc)


# --------------------------------------------------------------------------
# index construction and injection
# --------------------------------------------------------------------------

def run_index(assets_dir, embedder, out_path, extensions=(".png", ".jpg", ".jpeg")) -> int:
    """Embed every asset under ``assets_dir`` (sorted relative paths) into an index.

    Record ids are the relative paths, so re-running over the same tree with
    the same embedder writes a bit-identical file.
    """
    root = Path(assets_dir)
    refs = sorted(
        str(p.relative_to(root).as_posix())
        for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in extensions
    )
    base = kb_mod.KnowledgeBase(embedder.dim)
    if refs:
        vectors = embedder.embed(EmbedRequest("image", tuple(refs)))
        records = [
            kb_mod.ImageRecord(id=ref, asset_ref=ref, embedding=vec)
            for ref, vec in zip(refs, vectors)
        ]
        base = kb_mod.KnowledgeBase(embedder.dim, records)
    kb_mod.save_index(base, out_path)
    return len(base)


def run_inject(index_path, corpus_path, embedder, out_path) -> int:
    base = kb_mod.load_index(index_path)
    specs = corpus_mod.load_corpus(corpus_path)
    injected = kb_mod.inject_watermarks(base, specs, embedder)
    kb_mod.save_index(injected, out_path)
    return len(specs)


# --------------------------------------------------------------------------
# probe: run the full watermark x probe grid, write the evidence log
# --------------------------------------------------------------------------

def _check_consistency(base: kb_mod.KnowledgeBase, specs, embedder, k: int) -> None:
    spec_ids = {s.id for s in specs}
    dangling = base.watermark_ids() - spec_ids
    if dangling:
        raise InvalidConfigError(
            f"index references watermark ids absent from the corpus: {sorted(dangling)[:5]}"
        )
    status = embedder.healthcheck()
    if status.dim != base.dim:
        raise InvalidConfigError(
            f"embedding backend dim {status.dim} != index dim {base.dim}"
        )
    if k < 1:
        raise InvalidConfigError("k must be >= 1")


def run_probe(cfg: AuditConfig, log_path=None) -> list[verif_mod.TrialResult]:
    """Execute every (spec, probe) grid cell and append trials to the log.

    Per-trial backend failures are recorded with eval 0 and an error note; the
    grid always completes. Trials are written in grid order regardless of the
    worker count, so runs with the same seed produce identical logs.
    """
    base = kb_mod.load_index(cfg.index_path)
    specs = corpus_mod.load_corpus(cfg.corpus_path)
    if not specs:
        raise InvalidConfigError("corpus has no watermark specs to probe")
    n_ds = corpus_mod.probes_per_spec(specs)
    embedder = build_embedder(cfg)
    generator = build_generator(cfg, specs=specs)
    _check_consistency(base, specs, embedder, cfg.k)
    sampling = cfg.sampling_params()

    grid = [(spec, probe_idx) for spec in specs for probe_idx in range(n_ds)]
    probe_texts = [spec.probes[i].full_text for spec, i in grid]
    query_vecs = embedder.embed(EmbedRequest("text", tuple(probe_texts)))

    def one_trial(cell_idx: int) -> verif_mod.TrialResult:
        spec, probe_idx = grid[cell_idx]
        retrieved_ids: tuple[str, ...] = ()
        rank = 2 * cfg.k
        output = ""
        bit = 0
        error = None
        try:
            result = base.retrieve(query_vecs[cell_idx], cfg.k, query_id=f"{spec.id}/{probe_idx}")
            retrieved_ids = tuple(rid for rid, _ in result.entries)
            rank = kb_mod.rank_of(spec.id, result, cfg.k)
            assets = tuple(base.get(rid).asset_ref for rid in retrieved_ids)
            output = generator.generate(
                GenerationRequest(
                    query_text=probe_texts[cell_idx], image_refs=assets, sampling=sampling
                )
            )
            bit = verif_mod.eval_match(output, spec.signature)
        except Exception as exc:
            error = _describe_backend_error(exc)
            bit = 0
        return verif_mod.TrialResult(
            spec_id=spec.id,
            probe_index=probe_idx,
            retrieved_ids=retrieved_ids,
            rank=rank,
            output_text=output,
            eval_bit=bit,
            error=error,
            timestamp=_now(),
        )

    if log_path is None:
        log_path = Path(cfg.out_dir) / "evidence.jsonl"
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    trials: list[verif_mod.TrialResult] = []
    # stream in grid order: a crashed run leaves a valid, re-verifiable prefix
    with open(log_path, "w", encoding="utf-8") as fh:
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                produced = pool.map(one_trial, range(len(grid)))
                for trial in produced:
                    fh.write(verif_mod.trial_to_json(trial) + "\n")
                    fh.flush()
                    trials.append(trial)
        else:
            for i in range(len(grid)):
                trial = one_trial(i)
                fh.write(verif_mod.trial_to_json(trial) + "\n")
                fh.flush()
                trials.append(trial)
    return trials


# --------------------------------------------------------------------------
# verify: pure re-analysis of an evidence log
# --------------------------------------------------------------------------

def run_verify(cfg: AuditConfig, log_path, baseline_log=None, report_path=None) -> dict:
    """Aggregate a trial log and test it against a baseline and/or references.

    With a clean baseline log, a two-sample Welch test of the equality null
    runs on the eval bits. With a reference pair, the deployment decision is
    computed at both configured alpha levels. At least one of the two must be
    available.
    """
    trials = verif_mod.read_trial_log(log_path)
    if not trials:
        raise InvalidConfigError(f"evidence log {log_path} holds no trials")
    specs = corpus_mod.load_corpus(cfg.corpus_path)
    n_wm = len(specs)
    n_ds = corpus_mod.probes_per_spec(specs)
    agg = verif_mod.aggregate_trials(trials, n_wm, n_ds, cfg.k)

    refs = None
    if cfg.reference_preset or cfg.reference_file:
        refs = references_for(cfg)  # misconfigured references fail loudly here
    if refs is None and baseline_log is None:
        raise InvalidConfigError(
            "nothing to test against: provide a clean baseline log or a reference preset/file"
        )

    bits = [t.eval_bit for t in trials]
    suspect = stats_mod.summarize(bits)
    report: dict = {
        "generated_at": _now(),
        "config_fingerprint": cfg.fingerprint(),
        "evidence_log": str(log_path),
        "k": cfg.k,
        "n_watermarks": n_wm,
        "n_probes_per_watermark": n_ds,
        "aggregates": {
            "n_trials": agg.n_trials,
            "n_observed": agg.n_observed,
            "vsr": agg.vsr,
            "cgsr": agg.cgsr,
            "mean_rank": agg.mean_rank,
        },
        "per_spec": agg.per_spec,
        "suspect_stats": {"mean": suspect.mean, "variance": suspect.variance, "n": suspect.n},
    }

    if baseline_log is not None:
        base_trials = verif_mod.read_trial_log(baseline_log)
        if len(base_trials) < 2:
            raise InvalidConfigError("baseline log needs at least two trials")
        baseline = stats_mod.summarize([t.eval_bit for t in base_trials])
        equality = stats_mod.welch_test(suspect, baseline)
        report["equality_test"] = {
            "baseline_log": str(baseline_log),
            "baseline_stats": {
                "mean": baseline.mean,
                "variance": baseline.variance,
                "n": baseline.n,
            },
            "t": equality.t,
            "df": equality.df,
            "p_one_sided": equality.p_one_sided,
            "p_two_sided": equality.p_two_sided,
            "log10_p_one_sided": equality.log10_p_one_sided,
            "reject_at_alpha": equality.p_two_sided < cfg.alpha,
            "alpha": cfg.alpha,
        }

    if refs is not None:
        clean_ref, wm_ref = refs
        deployment = {}
        for label, alpha in (("alpha", cfg.alpha), ("deployment_alpha", cfg.deployment_alpha)):
            res = stats_mod.deployment_test(suspect, clean_ref, wm_ref, alpha)
            deployment[label] = {
                "alpha": alpha,
                "decision": res.decision,
                "p_above_clean": res.p_above_clean,
                "p_below_watermarked": res.p_below_watermarked,
                "log10_p_above_clean": res.test_vs_clean.log10_p_one_sided,
            }
        report["deployment"] = deployment
        report["references"] = {
            "method": clean_ref.method,
            "clean": {"mean": clean_ref.mean, "variance": clean_ref.variance},
            "watermarked": {"mean": wm_ref.mean, "variance": wm_ref.variance},
            "assumed_n": clean_ref.assumed_n,
        }
        report["decision"] = deployment["deployment_alpha"]["decision"]
    else:
        eq = report["equality_test"]
        report["decision"] = (
            stats_mod.DECISION_WATERMARKED
            if eq["reject_at_alpha"] and suspect.mean > eq["baseline_stats"]["mean"]
            else stats_mod.DECISION_INCONCLUSIVE
        )

    if report_path is None:
        report_path = Path(cfg.out_dir) / "report.json"
    _write_json(report, report_path)
    return report


# --------------------------------------------------------------------------
# sequential audit with live probing
# --------------------------------------------------------------------------

def run_sequential(cfg: AuditConfig, report_path=None, log_path=None) -> dict:
    """Issue grid probes one at a time until the suspect-vs-clean p dips below alpha.

    Each distinct grid cell is used at most once: the scripted generator is
    deterministic per (seed, query), so replaying a probe would replay its
    outcome and add no evidence.
    """
    base = kb_mod.load_index(cfg.index_path)
    specs = corpus_mod.load_corpus(cfg.corpus_path)
    if not specs:
        raise InvalidConfigError("corpus has no watermark specs to probe")
    n_ds = corpus_mod.probes_per_spec(specs)
    embedder = build_embedder(cfg)
    generator = build_generator(cfg, specs=specs)
    _check_consistency(base, specs, embedder, cfg.k)
    clean_ref, _wm_ref = references_for(cfg)
    sampling = cfg.sampling_params()

    grid = [(spec, probe_idx) for spec in specs for probe_idx in range(n_ds)]
    trials: list[verif_mod.TrialResult] = []

    def trial_fn(cell) -> int:
        spec, probe_idx = cell
        text = spec.probes[probe_idx].full_text
        vec = embedder.embed(EmbedRequest("text", (text,)))[0]
        result = base.retrieve(vec, cfg.k, query_id=f"{spec.id}/{probe_idx}")
        retrieved_ids = tuple(rid for rid, _ in result.entries)
        rank = kb_mod.rank_of(spec.id, result, cfg.k)
        assets = tuple(base.get(rid).asset_ref for rid in retrieved_ids)
        output = generator.generate(
            GenerationRequest(query_text=text, image_refs=assets, sampling=sampling)
        )
        bit = verif_mod.eval_match(output, spec.signature)
        trials.append(
            verif_mod.TrialResult(
                spec_id=spec.id,
                probe_index=probe_idx,
                retrieved_ids=retrieved_ids,
                rank=rank,
                output_text=output,
                eval_bit=bit,
                timestamp=_now(),
            )
        )
        return bit

    def on_trial(n, cell, bit, error):
        if error is not None:
            spec, probe_idx = cell
            trials.append(
                verif_mod.TrialResult(
                    spec_id=spec.id,
                    probe_index=probe_idx,
                    retrieved_ids=(),
                    rank=2 * cfg.k,
                    output_text="",
                    eval_bit=0,
                    error=error,
                    timestamp=_now(),
                )
            )

    outcome = stats_mod.sequential_audit(
        trial_fn, iter(grid), clean_ref, cfg.alpha, cfg.max_queries, on_trial=on_trial
    )

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if log_path is None:
        log_path = out_dir / "sequential_evidence.jsonl"
    verif_mod.write_trial_log(trials, log_path)
    trace_path = out_dir / "p_trace.csv"
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_index", "p_one_sided"])
        for i, p in enumerate(outcome.p_trace, start=2):
            writer.writerow([i, repr(p)])
    report = {
        "generated_at": _now(),
        "config_fingerprint": cfg.fingerprint(),
        "evidence_log": str(log_path),
        "p_trace_file": str(trace_path),
        "decision": outcome.decision,
        "queries_used": outcome.queries_used,
        "alpha": cfg.alpha,
        "p_trace": list(outcome.p_trace),
        "suspect_stats": (
            None
            if outcome.suspect is None
            else {
                "mean": outcome.suspect.mean,
                "variance": outcome.suspect.variance,
                "n": outcome.suspect.n,
            }
        ),
    }
    if report_path is None:
        report_path = out_dir / "sequential_report.json"
    _write_json(report, report_path)
    return report


# --------------------------------------------------------------------------
# harmlessness: normal queries must not surface watermark records
# --------------------------------------------------------------------------

def load_queries(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        queries = [line.strip() for line in fh]
    return [q for q in queries if q]


def watermark_retrieval_sweep(base, embedder, queries, k):
    """Retrieve every query and collect those whose top-k holds a watermark.

    Returns ``(hits, retrieving)`` where ``retrieving`` pairs each offending
    query with its retrieved record ids.
    """
    wm_ids = base.watermark_ids()
    vectors = embedder.embed(EmbedRequest("text", tuple(queries)))
    hits = 0
    retrieving: list[tuple[str, tuple[str, ...]]] = []
    for text, vec in zip(queries, vectors):
        result = base.retrieve(vec, k)
        retrieved = tuple(rid for rid, _ in result.entries)
        if any(rid in wm_ids for rid in retrieved):
            hits += 1
            retrieving.append((text, retrieved))
    return hits, retrieving


def run_harmlessness(cfg: AuditConfig, queries_path=None, report_path=None, with_generation=False) -> dict:
    """Retrieval-only sweep of normal queries; reports the watermark retrieval rate.

    Optionally runs generation over the retrieving subset and reports its
    conditional success rate (normally undefined, since nothing retrieves).
    """
    queries_path = queries_path or cfg.normal_queries_path
    if not queries_path:
        raise InvalidConfigError("harmlessness needs a normal-queries file")
    queries = load_queries(queries_path)
    if not queries:
        raise InvalidConfigError(f"normal-queries file {queries_path} is empty")
    base = kb_mod.load_index(cfg.index_path)
    embedder = build_embedder(cfg)
    status = embedder.healthcheck()
    if status.dim != base.dim:
        raise InvalidConfigError(f"embedding backend dim {status.dim} != index dim {base.dim}")
    wm_ids = base.watermark_ids()
    hits, retrieving = watermark_retrieval_sweep(base, embedder, queries, cfg.k)
    rate = hits / len(queries)
    report = {
        "generated_at": _now(),
        "config_fingerprint": cfg.fingerprint(),
        "n_queries": len(queries),
        "n_watermarks_in_index": len(wm_ids),
        "k": cfg.k,
        "watermark_retrieval_count": hits,
        "watermark_retrieval_rate": rate,
        "cgsr_over_retrievals": None,
    }
    if with_generation and retrieving:
        specs = corpus_mod.load_corpus(cfg.corpus_path)
        by_id = {s.id: s for s in specs}
        generator = build_generator(cfg, specs=specs)
        sampling = cfg.sampling_params()
        successes = 0
        for text, retrieved in retrieving:
            assets = tuple(base.get(rid).asset_ref for rid in retrieved)
            output = generator.generate(
                GenerationRequest(query_text=text, image_refs=assets, sampling=sampling)
            )
            wm_hit = next(rid for rid in retrieved if rid in wm_ids)
            successes += verif_mod.eval_match(output, by_id[wm_hit].signature)
        report["cgsr_over_retrievals"] = successes / len(retrieving)
    if report_path is None:
        report_path = Path(cfg.out_dir) / "harmlessness.json"
    _write_json(report, report_path)
    return report


# --------------------------------------------------------------------------
# transform: re-embed watermark assets after tampering-style edits
# --------------------------------------------------------------------------

def run_transform(cfg: AuditConfig, assets_root, out_assets_dir, out_index_path) -> dict:
    """Apply the configured pipeline to every watermark asset and re-embed.

    ``replace`` swaps each watermark record's embedding for the transformed
    asset's; ``add`` appends transformed copies as new records alongside the
    originals.
    """
    if cfg.transform_pipeline is None:
        raise InvalidConfigError("no transform_pipeline configured")
    pipeline = transforms_mod.parse_pipeline(cfg.transform_pipeline)
    base = kb_mod.load_index(cfg.index_path)
    specs = corpus_mod.load_corpus(cfg.corpus_path)
    embedder = build_embedder(cfg)
    out_dir = Path(out_assets_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    assets_root = Path(assets_root)

    transformed_refs: dict[str, str] = {}
    for spec in specs:
        if spec.id not in base:
            continue
        img = transforms_mod.read_png(assets_root / spec.asset_ref)
        result = transforms_mod.compose(img, pipeline)
        rel = Path(spec.asset_ref)
        out_ref = str((rel.parent / (rel.stem + ".transformed" + rel.suffix)).as_posix())
        target = out_dir / out_ref
        target.parent.mkdir(parents=True, exist_ok=True)
        transforms_mod.write_png(result, target)
        transformed_refs[spec.id] = out_ref

    vectors = {}
    if transformed_refs:
        ordered = sorted(transformed_refs.items())
        embedded = embedder.embed(EmbedRequest("image", tuple(ref for _, ref in ordered)))
        vectors = {spec_id: vec for (spec_id, _), vec in zip(ordered, embedded)}

    records = []
    for rec in base.records:
        if cfg.transform_mode == "replace" and rec.watermark_id in vectors:
            records.append(
                kb_mod.ImageRecord(
                    id=rec.id,
                    asset_ref=transformed_refs[rec.watermark_id],
                    embedding=vectors[rec.watermark_id],
                    watermark_id=rec.watermark_id,
                )
            )
        else:
            records.append(rec)
    if cfg.transform_mode == "add":
        for spec_id, ref in sorted(transformed_refs.items()):
            records.append(
                kb_mod.ImageRecord(
                    id=f"{spec_id}::transformed",
                    asset_ref=ref,
                    embedding=vectors[spec_id],
                    watermark_id=spec_id,
                )
            )
    new_base = kb_mod.KnowledgeBase(base.dim, records)
    kb_mod.save_index(new_base, out_index_path)
    return {
        "n_transformed": len(transformed_refs),
        "mode": cfg.transform_mode,
        "out_assets_dir": str(out_dir),
        "out_index": str(out_index_path),
    }


# --------------------------------------------------------------------------
# report rendering
# --------------------------------------------------------------------------

def per_spec_rates(log_path) -> list[float]:
    """Per-watermark success rates from an evidence log, id order."""
    trials = verif_mod.read_trial_log(log_path)
    groups: dict[str, list[int]] = {}
    for t in trials:
        groups.setdefault(t.spec_id, []).append(t.eval_bit)
    return [sum(bits) / len(bits) for _sid, bits in sorted(groups.items())]


def run_report(
    report_path,
    out_dir,
    index_path=None,
    pca_components=2,
    roc_clean_log=None,
    roc_wm_log=None,
) -> list[str]:
    """Render a JSON report into a text summary and plot-ready CSV tables.

    With an index path, PCA coordinates of the record embeddings are exported
    for stealthiness plots (watermark vs normal records). With a pair of
    evidence logs from a clean and a watermarked service, per-watermark
    success rates become an (FPR, TPR) table.
    """
    with open(report_path, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    summary = out_dir / "report.txt"
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write(_render_text(report))
    written.append(str(summary))

    if "p_trace" in report:
        trace = out_dir / "p_trace.csv"
        with open(trace, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_index", "p_one_sided"])
            for i, p in enumerate(report["p_trace"], start=2):
                writer.writerow([i, repr(p)])
        written.append(str(trace))

    if "per_spec" in report:
        per_spec = out_dir / "per_spec.csv"
        with open(per_spec, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["spec_id", "n", "vsr", "cgsr", "mean_rank"])
            for spec_id, row in report["per_spec"].items():
                writer.writerow(
                    [spec_id, row["n"], row["vsr"],
                     "" if row["cgsr"] is None else row["cgsr"], row["mean_rank"]]
                )
        written.append(str(per_spec))

    if roc_clean_log is not None and roc_wm_log is not None:
        clean_rates = per_spec_rates(roc_clean_log)
        wm_rates = per_spec_rates(roc_wm_log)
        thresholds = [i / 20 for i in range(21)]
        points = stats_mod.roc_points(clean_rates, wm_rates, thresholds)
        roc_csv = out_dir / "roc.csv"
        with open(roc_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr"])
            for fpr, tpr in points:
                writer.writerow([repr(fpr), repr(tpr)])
        written.append(str(roc_csv))

    if index_path is not None:
        base = kb_mod.load_index(index_path)
        if len(base) >= 2:
            projection = stats_mod.pca_project(
                [rec.embedding for rec in base.records], components=pca_components
            )
            pca_csv = out_dir / "pca.csv"
            with open(pca_csv, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                header = ["record_id", "is_watermark"] + [
                    f"pc{i + 1}" for i in range(pca_components)
                ]
                writer.writerow(header)
                for rec, coords in zip(base.records, projection.coordinates):
                    writer.writerow(
                        [rec.id, int(rec.watermark_id is not None)]
                        + [repr(float(c)) for c in coords]
                    )
            written.append(str(pca_csv))
    return written


def _render_text(report: dict) -> str:
    lines = ["audit report", "============"]
    if "config_fingerprint" in report:
        lines.append(f"config fingerprint: {report['config_fingerprint']}")
    if "evidence_log" in report:
        lines.append(f"evidence log:       {report['evidence_log']}")
    agg = report.get("aggregates")
    if agg:
        cgsr = agg["cgsr"]
        lines.append("")
        lines.append(f"trials (grid / observed): {agg['n_trials']} / {agg['n_observed']}")
        lines.append(f"verification success rate: {agg['vsr']:.4f}")
        lines.append(
            "conditional generation success rate: "
            + ("undefined (no successful retrievals)" if cgsr is None else f"{cgsr:.4f}")
        )
        lines.append(f"mean rank: {agg['mean_rank']:.2f}")
    eq = report.get("equality_test")
    if eq:
        lines.append("")
        lines.append("equality null vs clean baseline (Welch):")
        lines.append(f"  t = {eq['t']:.6g}, df = {eq['df']:.6g}")
        lines.append(
            f"  p (two-sided) = {eq['p_two_sided']:.6g}"
            f"  [log10 p one-sided = {eq['log10_p_one_sided']:.3f}]"
        )
    dep = report.get("deployment")
    if dep:
        lines.append("")
        lines.append("deployment hypothesis tests:")
        for label, row in dep.items():
            lines.append(
                f"  {label}={row['alpha']:g}: {row['decision']}"
                f" (p above clean = {row['p_above_clean']:.3g}"
                f" [log10 = {row['log10_p_above_clean']:.2f}],"
                f" p below watermarked = {row['p_below_watermarked']:.3g})"
            )
    if "queries_used" in report:
        lines.append("")
        lines.append(f"sequential audit: decision={report['decision']}"
                     f" after {report['queries_used']} queries at alpha={report['alpha']:g}")
    if "watermark_retrieval_rate" in report:
        lines.append("")
        lines.append(
            f"harmlessness: {report['watermark_retrieval_count']} of {report['n_queries']} "
            f"normal queries retrieved a watermark "
            f"(rate {report['watermark_retrieval_rate']:.6f}, "
            f"{report['n_watermarks_in_index']} watermark records present)"
        )
    if "decision" in report:
        lines.append("")
        lines.append(f"decision: {report['decision']}")
    return "\n".join(lines) + "\n"


def _write_json(obj: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
