"""Subcommand CLI: one invocation per pipeline step.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 remote-scorer
failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import daf as daf_mod
from . import tcac as tcac_mod
from .datastore import (
    DatasetManifest,
    load_manifest,
    read_embeddings,
    write_embeddings,
    write_manifest,
)
from .errors import GlitchscopeError, StorageError, ValidationError
from .images import load_image, save_png
from .labels import CaseRegistry, LabelStore, aggregate_report, read_label_log
from .scorer import embed_images, embed_texts, parse_binding, score_image_captions
from .transforms import apply as apply_transform
from .transforms import make_suite


@click.group()
def cli():
    """Audit image-embedding models for systematic failures."""


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def ingest(manifest_path, out_dir):
    """Validate a dataset manifest and cache decoded images as PNG."""
    manifest = load_manifest(manifest_path)
    out = Path(out_dir)
    original_dir = out / "original"
    original_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for rec in manifest.records:
        image = load_image(rec.image_path)
        save_png(image, original_dir / f"{rec.id}.png")
        records.append(rec)
    normalized = DatasetManifest(records=tuple(records), source_name=manifest.source_name)
    write_manifest(normalized, out / "manifest.jsonl")
    click.echo(f"ingested {len(manifest)} records -> {out}")


@cli.command()
@click.option("--scorer", "scorer_spec", required=True,
              help="toy:seed=N,dim=D | remote:<url> | file:<path>")
@click.option("--modality", type=click.Choice(["image", "text"]), required=True)
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def embed(scorer_spec, modality, manifest_path, out_path):
    """Embed all images, or all unique captions, of a manifest."""
    binding = parse_binding(scorer_spec)
    manifest = load_manifest(manifest_path)
    if modality == "image":
        items = [(rec.id, load_image(rec.image_path)) for rec in manifest.records]
        store = embed_images(binding, items)
    else:
        store = embed_texts(binding, manifest.unique_captions())
    write_embeddings(store, out_path)
    click.echo(f"embedded {len(store)} {modality} vectors (dim {store.dim}) -> {out_path}")


@cli.group()
def daf():
    """Discrepancy mining between two embedding models."""


@daf.command("run")
@click.option("--emb-a", required=True, type=click.Path())
@click.option("--emb-b", required=True, type=click.Path())
@click.option("--k", default=10, show_default=True)
@click.option("--metric", type=click.Choice(["cosine", "l2"]), default="cosine", show_default=True)
@click.option("--threshold", default=daf_mod.DEFAULT_THRESHOLD, show_default=True)
@click.option("--rbo-p", default=daf_mod.DEFAULT_RBO_P, show_default=True)
@click.option("--manifest", "manifest_path", type=click.Path(), default=None,
              help="Attach primary captions to cases.")
@click.option("--caption-policy", type=click.Choice(["longest", "first"]),
              default="longest", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def daf_run(emb_a, emb_b, k, metric, threshold, rbo_p, manifest_path, caption_policy, out_path):
    """Flag images whose top-k neighbor lists diverge between two stores."""
    store_a = read_embeddings(emb_a)
    store_b = read_embeddings(emb_b)
    manifest = load_manifest(manifest_path) if manifest_path else None
    cases = daf_mod.run_daf(store_a, store_b, k=k, metric=metric, threshold=threshold,
                            rbo_p=rbo_p, manifest=manifest, caption_policy=caption_policy)
    daf_mod.save_cases(cases, out_path, k=k, metric=metric)
    click.echo(f"flagged {len(cases)} of {len(store_a)} images -> {out_path}")


@daf.command("prompt")
@click.option("--cases", "cases_path", required=True, type=click.Path())
@click.option("--batch", default=10, show_default=True)
@click.option("--caption-policy", type=click.Choice(["longest", "first"]),
              default="longest", show_default=True)
@click.option("--manifest", "manifest_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
def daf_prompt(cases_path, batch, caption_policy, manifest_path, out_dir):
    """Write caption-analysis prompt files for flagged cases."""
    cases = daf_mod.load_cases(cases_path)
    if not cases:
        raise ValidationError(f"no cases in {cases_path}")
    manifest = load_manifest(manifest_path) if manifest_path else None
    paths = daf_mod.write_prompt_files(cases, out_dir, batch_size=batch,
                                       caption_policy=caption_policy, manifest=manifest)
    click.echo(f"wrote {len(paths)} prompt files -> {out_dir}")


@cli.group()
def tcac():
    """Caption-ranking churn under image transformations."""


@tcac.command("pool")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--text-emb", "text_emb_path", required=True, type=click.Path())
@click.option("--per-caption", default=tcac_mod.DEFAULT_PER_CAPTION, show_default=True)
@click.option("--scope", type=click.Choice(["per-image", "global"]),
              default="per-image", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def tcac_pool(manifest_path, text_emb_path, per_caption, scope, out_path):
    """Build per-image candidate caption pools from text-embedding neighbors."""
    manifest = load_manifest(manifest_path)
    text_store = read_embeddings(text_emb_path)
    pools = []
    for rec in manifest.records:
        if scope == "global":
            pools.append(tcac_mod.global_caption_pool(manifest, rec.id))
        else:
            pools.append(tcac_mod.build_caption_pool(rec, text_store, per_caption=per_caption))
    tcac_mod.save_pools(pools, out_path)
    click.echo(f"built {len(pools)} caption pools -> {out_path}")


@tcac.command("run")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--pools", "pools_path", required=True, type=click.Path())
@click.option("--scorer", "scorer_spec", required=True)
@click.option("--transforms", "transforms_path", type=click.Path(), default=None,
              help="JSON suite config; defaults to the six-transform suite.")
@click.option("--seed", default=0, show_default=True)
@click.option("--k", default=tcac_mod.DEFAULT_TOP_K, show_default=True)
@click.option("--select", "per_transform", default=tcac_mod.DEFAULT_PER_TRANSFORM, show_default=True)
@click.option("--temperature", default=tcac_mod.DEFAULT_TEMPERATURE, show_default=True)
@click.option("--daf-cases", "daf_cases_path", type=click.Path(), default=None)
@click.option("--images-out", "images_out", type=click.Path(), default=None,
              help="Write original + transformed PNGs here for the triage UI.")
@click.option("--out", "out_path", required=True, type=click.Path())
def tcac_run(manifest_path, pools_path, scorer_spec, transforms_path, seed, k,
             per_transform, temperature, daf_cases_path, images_out, out_path):
    """Score caption rankings before/after each transform and keep the churners."""
    manifest = load_manifest(manifest_path)
    pools = tcac_mod.load_pools(pools_path)
    binding = parse_binding(scorer_spec)
    config = None
    if transforms_path:
        try:
            config = json.loads(Path(transforms_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{transforms_path}: invalid suite config: {exc}") from exc
        if isinstance(config, dict) and "transforms" in config:
            config = config["transforms"]
    suite = make_suite(config, base_seed=seed)

    images_dir = Path(images_out) if images_out else None
    cases = []
    for rec in manifest.records:
        if rec.id not in pools:
            raise ValidationError(f"no caption pool for image {rec.id!r} in {pools_path}")
        pool = pools[rec.id]
        image = load_image(rec.image_path)
        if images_dir is not None:
            save_png(image, images_dir / "original" / f"{rec.id}.png")
        logits = score_image_captions(binding, (rec.id, image), pool.captions)
        before = tcac_mod.score_captions(rec.id, pool.captions, logits,
                                         temperature_scale=temperature, state="original")
        for spec in suite:
            transformed = apply_transform(spec, image, rec.id)
            if images_dir is not None:
                save_png(transformed, images_dir / spec.kind / f"{rec.id}.png")
            t_logits = score_image_captions(binding, (rec.id, transformed), pool.captions)
            after = tcac_mod.score_captions(rec.id, pool.captions, t_logits,
                                            temperature_scale=temperature,
                                            state=f"transformed:{spec.kind}")
            cases.append(tcac_mod.diff_rankings(before, after, k=k))
    selected = tcac_mod.select_cases(cases, per_transform=per_transform)
    if daf_cases_path:
        tcac_mod.annotate_cases(selected, daf_mod.load_cases(daf_cases_path))
    tcac_mod.save_cases(selected, out_path)
    click.echo(f"selected {len(selected)} cases across {len(suite)} transforms -> {out_path}")


@cli.command()
@click.option("--daf-cases", "daf_cases_path", type=click.Path(), default=None)
@click.option("--tcac-cases", "tcac_cases_path", type=click.Path(), default=None)
@click.option("--labels", "labels_path", required=True, type=click.Path())
@click.option("--images", "images_dir", type=click.Path(), default=None)
@click.option("--ui", "ui_dir", type=click.Path(), default=None,
              help="Directory with the built triage UI bundle.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True)
def serve(daf_cases_path, tcac_cases_path, labels_path, images_dir, ui_dir, host, port):
    """Serve the triage API and UI."""
    import uvicorn

    from .service import build_registry, create_app

    registry = build_registry(daf_cases_path, tcac_cases_path)
    store = LabelStore(labels_path)
    app = create_app(registry, store, images_dir=images_dir, ui_dir=ui_dir)
    click.echo(f"serving {len(registry)} cases on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@cli.command()
@click.option("--labels", "labels_path", required=True, type=click.Path())
@click.option("--cases", "case_paths", multiple=True, required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def report(labels_path, case_paths, out_path):
    """Aggregate triage labels into a fault report."""
    from .service import build_registry_from_files

    registry = build_registry_from_files(case_paths)
    labels = read_label_log(labels_path)
    result = aggregate_report(labels, registry)
    Path(out_path).write_text(
        json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"report over {result.total_cases} cases -> {out_path}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except GlitchscopeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.exceptions.Exit as exc:  # --help and friends
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(1)
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        sys.exit(StorageError.exit_code)
    return 0


if __name__ == "__main__":
    main()
