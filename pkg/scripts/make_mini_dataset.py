#!/usr/bin/env python3
"""Regenerate the bundled synthetic mini-dataset (32 images x 5 captions)."""

from pathlib import Path

from glitchscope.mini import generate_mini_dataset

if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "glitchscope" / "datafiles" / "mini"
    manifest = generate_mini_dataset(out)
    total = sum(len(r.captions) for r in manifest.records)
    print(f"wrote {len(manifest)} records, {total} captions -> {out}")
