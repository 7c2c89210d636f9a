"""Command-line surface.

Exit codes: 0 = clean, 2 = uses-watermarked-data, 3 = inconclusive,
1 = operational error. Scripts get the decision without parsing output.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click

from . import audit
from .config import AuditConfig, load_config
from .corpus import lint_signatures, load_corpus
from .demo import write_demo_workspace
from .errors import RagmarkError


def _overrides(cfg: AuditConfig, seed, workers, alpha, out):
    if seed is not None:
        cfg.seed = seed
    if workers is not None:
        cfg.workers = workers
    if alpha is not None:
        cfg.alpha = alpha
    if out is not None:
        cfg.out_dir = out
    cfg.validate()
    return cfg


def common_options(fn):
    @click.option("--config", "config_path", required=True, type=click.Path(exists=True))
    @click.option("--seed", type=int, default=None, help="Override the run seed.")
    @click.option("--workers", type=int, default=None, help="Override the worker count.")
    @click.option("--alpha", type=float, default=None, help="Override the screening alpha.")
    @click.option("--out", type=click.Path(), default=None, help="Override the output directory.")
    @functools.wraps(fn)
    def wrapper(config_path, seed, workers, alpha, out, **kwargs):
        try:
            cfg = _overrides(load_config(config_path), seed, workers, alpha, out)
            return fn(cfg=cfg, **kwargs)
        except RagmarkError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(audit.EXIT_OPERATIONAL_ERROR)

    return wrapper


@click.group()
def main():
    """Watermark an image knowledge base and audit suspect RAG services."""


@main.command()
@click.option("--assets", "assets_dir", required=True, type=click.Path(exists=True))
@click.option("--out-index", "out_index", required=True, type=click.Path())
@common_options
def index(cfg, assets_dir, out_index):
    """Embed every asset in a directory into a new index file."""
    from .config import build_embedder

    count = audit.run_index(assets_dir, build_embedder(cfg), out_index)
    click.echo(f"indexed {count} assets -> {out_index}")


@main.command()
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--out-index", "out_index", required=True, type=click.Path())
@common_options
def inject(cfg, index_path, out_index):
    """Inject the corpus watermarks into an index."""
    from .config import build_embedder

    for warning in lint_signatures(load_corpus(cfg.corpus_path)):
        click.echo(f"warning: {warning}", err=True)
    count = audit.run_inject(index_path, cfg.corpus_path, build_embedder(cfg), out_index)
    click.echo(f"injected {count} watermarks -> {out_index}")


@main.command()
@click.option("--log", "log_path", type=click.Path(), default=None)
@common_options
def probe(cfg, log_path):
    """Run the full watermark x probe grid and write the evidence log."""
    trials = audit.run_probe(cfg, log_path=log_path)
    target = log_path or Path(cfg.out_dir) / "evidence.jsonl"
    click.echo(f"wrote {len(trials)} trials -> {target}")


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path(exists=True))
@click.option("--baseline", "baseline_log", type=click.Path(exists=True), default=None)
@click.option("--report", "report_path", type=click.Path(), default=None)
@common_options
def verify(cfg, log_path, baseline_log, report_path):
    """Aggregate an evidence log, test it, and write the audit report."""
    report = audit.run_verify(cfg, log_path, baseline_log=baseline_log, report_path=report_path)
    target = report_path or Path(cfg.out_dir) / "report.json"
    click.echo(f"decision: {report['decision']} -> {target}")
    sys.exit(audit.exit_code_for(report["decision"]))


@main.command()
@common_options
def sequential(cfg):
    """Probe one query at a time, stopping at first significance."""
    report = audit.run_sequential(cfg)
    click.echo(
        f"decision: {report['decision']} after {report['queries_used']} queries"
    )
    sys.exit(audit.exit_code_for(report["decision"]))


@main.command()
@click.option("--queries", "queries_path", type=click.Path(exists=True), default=None)
@click.option("--with-generation", is_flag=True, default=False)
@common_options
def harmlessness(cfg, queries_path, with_generation):
    """Measure how often normal queries retrieve watermark records."""
    report = audit.run_harmlessness(cfg, queries_path=queries_path, with_generation=with_generation)
    click.echo(
        f"watermark retrieval rate: {report['watermark_retrieval_rate']:.6f} "
        f"({report['watermark_retrieval_count']}/{report['n_queries']})"
    )


@main.command()
@click.option("--assets-root", required=True, type=click.Path(exists=True))
@click.option("--out-assets", required=True, type=click.Path())
@click.option("--out-index", required=True, type=click.Path())
@common_options
def transform(cfg, assets_root, out_assets, out_index):
    """Apply the configured transform pipeline to watermark assets and re-embed."""
    result = audit.run_transform(cfg, assets_root, out_assets, out_index)
    click.echo(
        f"transformed {result['n_transformed']} assets ({result['mode']}) -> {result['out_index']}"
    )


@main.command()
@click.option("--report", "report_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--index", "index_path", type=click.Path(exists=True), default=None)
@click.option("--roc-clean", "roc_clean_log", type=click.Path(exists=True), default=None,
              help="Clean-service evidence log for an FPR/TPR table.")
@click.option("--roc-wm", "roc_wm_log", type=click.Path(exists=True), default=None,
              help="Watermarked-service evidence log for an FPR/TPR table.")
def report(report_path, out_dir, index_path, roc_clean_log, roc_wm_log):
    """Render a JSON report into a text summary and CSV tables (plus PCA export)."""
    try:
        written = audit.run_report(
            report_path, out_dir, index_path=index_path,
            roc_clean_log=roc_clean_log, roc_wm_log=roc_wm_log,
        )
    except RagmarkError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(audit.EXIT_OPERATIONAL_ERROR)
    for path in written:
        click.echo(f"wrote {path}")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--specs", type=int, default=3)
@click.option("--probes", type=int, default=3)
@click.option("--seed", type=int, default=7)
@click.option("--emission", type=float, default=0.9,
              help="Scripted signature emission probability.")
def demo(out_dir, specs, probes, seed, emission):
    """Materialize a ready-to-audit mock workspace."""
    root = write_demo_workspace(
        out_dir, n_specs=specs, n_probes=probes, seed=seed,
        emission_probability=emission,
    )
    click.echo(f"demo workspace at {root}; start with:")
    click.echo(f"  ragmark index --config {root}/config.json --assets {root}/assets "
               f"--out-index {root}/out/index.jsonl")


if __name__ == "__main__":
    main()
