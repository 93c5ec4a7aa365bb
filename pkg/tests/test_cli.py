import json

import pytest
from click.testing import CliRunner

from glitchscope.cli import cli, main
from glitchscope.daf import ANALYSIS_PROMPT
from glitchscope.datastore import read_embeddings


@pytest.fixture()
def runner():
    return CliRunner()


def run_ok(runner, args):
    result = runner.invoke(cli, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def run_pipeline(runner, mini_manifest_path, workdir, threshold="0.2"):
    """ingest -> embed x3 -> daf run -> tcac pool -> tcac run -> report."""
    manifest = str(mini_manifest_path)
    ingest_dir = workdir / "ingested"
    run_ok(runner, ["ingest", "--manifest", manifest, "--out", str(ingest_dir)])

    emb_a = workdir / "emb_a.gseb"
    emb_b = workdir / "emb_b.gseb"
    emb_t = workdir / "text.gseb"
    run_ok(runner, ["embed", "--scorer", "toy:seed=1,dim=32", "--modality", "image",
                    "--manifest", manifest, "--out", str(emb_a)])
    run_ok(runner, ["embed", "--scorer", "toy:seed=2,dim=32", "--modality", "image",
                    "--manifest", manifest, "--out", str(emb_b)])
    run_ok(runner, ["embed", "--scorer", "toy:seed=1,dim=32", "--modality", "text",
                    "--manifest", manifest, "--out", str(emb_t)])

    daf_out = workdir / "daf_cases.jsonl"
    run_ok(runner, ["daf", "run", "--emb-a", str(emb_a), "--emb-b", str(emb_b),
                    "--k", "10", "--metric", "cosine", "--threshold", threshold,
                    "--manifest", manifest, "--out", str(daf_out)])

    pools = workdir / "pools.jsonl"
    run_ok(runner, ["tcac", "pool", "--manifest", manifest, "--text-emb", str(emb_t),
                    "--per-caption", "10", "--out", str(pools)])

    tcac_out = workdir / "tcac_cases.jsonl"
    run_ok(runner, ["tcac", "run", "--manifest", manifest, "--pools", str(pools),
                    "--scorer", "toy:seed=1,dim=32", "--seed", "11", "--k", "10",
                    "--select", "100", "--temperature", "100",
                    "--daf-cases", str(daf_out),
                    "--images-out", str(workdir / "images"),
                    "--out", str(tcac_out)])

    labels = workdir / "labels.jsonl"
    labels.write_text("", encoding="utf-8")
    report_out = workdir / "report.json"
    run_ok(runner, ["report", "--labels", str(labels),
                    "--cases", str(daf_out), "--cases", str(tcac_out),
                    "--out", str(report_out)])
    return daf_out, tcac_out, report_out


class TestPipeline:
    def test_end_to_end_products(self, runner, mini_manifest_path, tmp_path):
        daf_out, tcac_out, report_out = run_pipeline(runner, mini_manifest_path, tmp_path)

        daf_lines = [json.loads(s) for s in daf_out.read_text().splitlines()]
        assert daf_lines, "low threshold should flag at least one image"
        assert all(line["source"] == "daf" for line in daf_lines)
        divergences = [1 - line["divergence"]["jaccard_at_k"] for line in daf_lines]
        assert divergences == sorted(divergences, reverse=True)

        tcac_lines = [json.loads(s) for s in tcac_out.read_text().splitlines()]
        kinds = {line["transform"] for line in tcac_lines}
        assert kinds == {"grayscale", "horizontal_flip", "random_rotation",
                         "random_affine", "random_perspective", "random_inversion"}
        # 32 images per transform, selection cap 100 leaves all of them
        assert len(tcac_lines) == 32 * 6

        report = json.loads(report_out.read_text())
        assert report["total_cases"] == len(daf_lines) + len(tcac_lines)
        assert report["unlabeled_cases"] == report["total_cases"]

    def test_rerun_is_byte_identical(self, runner, mini_manifest_path, tmp_path):
        first = run_pipeline(runner, mini_manifest_path, tmp_path / "run1")
        second = run_pipeline(runner, mini_manifest_path, tmp_path / "run2")
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_transformed_images_written_for_ui(self, runner, mini_manifest_path, tmp_path):
        run_pipeline(runner, mini_manifest_path, tmp_path)
        images = tmp_path / "images"
        assert (images / "original" / "mini_000.png").exists()
        assert (images / "grayscale" / "mini_000.png").exists()
        assert (images / "random_rotation" / "mini_031.png").exists()

    def test_embed_outputs_valid_store(self, runner, mini_manifest_path, tmp_path):
        out = tmp_path / "e.gseb"
        run_ok(runner, ["embed", "--scorer", "toy:seed=1,dim=16", "--modality", "image",
                        "--manifest", str(mini_manifest_path), "--out", str(out)])
        store = read_embeddings(out)
        assert len(store) == 32
        assert store.dim == 16


class TestDafPrompt:
    def test_writes_prompt_files(self, runner, mini_manifest_path, tmp_path):
        daf_out, _, _ = run_pipeline(runner, mini_manifest_path, tmp_path)
        prompts = tmp_path / "prompts"
        run_ok(runner, ["daf", "prompt", "--cases", str(daf_out), "--batch", "2",
                        "--caption-policy", "longest", "--out", str(prompts)])
        files = sorted(prompts.glob("prompt_*.txt"))
        assert files and files[0].name == "prompt_0.txt"
        text = files[0].read_text(encoding="utf-8")
        assert text.endswith(ANALYSIS_PROMPT + "\n")


class TestExitCodes:
    def test_missing_manifest_is_io_error(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["ingest", "--manifest", str(tmp_path / "absent.jsonl"),
                  "--out", str(tmp_path / "out")])
        assert excinfo.value.code == 3

    def test_invalid_manifest_is_validation_error(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        line = json.dumps({"id": "dup", "image_path": "x.png", "captions": ["c"]})
        bad.write_text(line + "\n" + line + "\n", encoding="utf-8")
        with pytest.raises(SystemExit) as excinfo:
            main(["embed", "--scorer", "toy:", "--modality", "text",
                  "--manifest", str(bad), "--out", str(tmp_path / "e.gseb")])
        assert excinfo.value.code == 2

    def test_unreachable_remote_is_scorer_error(self, tmp_path, mini_manifest_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["embed", "--scorer", "remote:http://127.0.0.1:9", "--modality", "text",
                  "--manifest", str(mini_manifest_path), "--out", str(tmp_path / "e.gseb")])
        assert excinfo.value.code == 4

    def test_corrupt_embedding_file_is_io_error(self, tmp_path):
        bad = tmp_path / "bad.gseb"
        bad.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(SystemExit) as excinfo:
            main(["daf", "run", "--emb-a", str(bad), "--emb-b", str(bad),
                  "--out", str(tmp_path / "cases.jsonl")])
        assert excinfo.value.code == 3

    def test_usage_error_exits_two(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["daf", "run"])  # missing required options
        assert excinfo.value.code == 2
