"""Command-line behavior: exit codes, file outputs, determinism."""

from __future__ import annotations

import json

import numpy as np
import pytest

from albalance.cli import main
from albalance.dataset import write_embeddings, write_labels
from albalance.imbalance import imbalance_ratio
from albalance.synth import blob_centers, sample_blobs

from conftest import make_counts


def write_dataset(tmp_path, name, store, oracle):
    emb = tmp_path / f"{name}.alemb"
    lab = tmp_path / f"{name}.labels"
    write_embeddings(emb, store.vectors)
    write_labels(lab, store.sample_names, (oracle.class_names[c] for c in oracle.labels))
    return emb, lab


def write_counts_labels(tmp_path, name, counts):
    path = tmp_path / f"{name}.labels"
    lines_names = []
    lines_classes = []
    i = 0
    for c, k in enumerate(counts):
        for _ in range(int(k)):
            lines_names.append(f"img{i:06d}")
            lines_classes.append(f"class{c:04d}")
            i += 1
    write_labels(path, lines_names, lines_classes)
    return path


@pytest.fixture()
def blob_files(tmp_path):
    centers = blob_centers(4, 8, 6.0, 41)
    store, oracle = sample_blobs(centers, [30, 24, 18, 12], 1.0, 42)
    test_store, test_oracle = sample_blobs(centers, [8] * 4, 1.0, 43)
    emb, lab = write_dataset(tmp_path, "train", store, oracle)
    temb, tlab = write_dataset(tmp_path, "test", test_store, test_oracle)
    return emb, lab, temb, tlab


def run_config_text(af="dmcs-rand", seeds="[0, 1]", extra=""):
    return f"""
[run]
budget = 24
iterations = 3
af = "{af}"
scheme_policy = "cs_svm_only"
seeds = {seeds}

[training]
epochs = 5
learning_rate = 0.05
batch_size = 16
hidden_width = 8
{extra}
"""


class TestStats:
    @pytest.mark.parametrize(
        "n,total,golden",
        [(101, 22956, 0.793), (100, 17168, 0.740), (67, 14281, 0.789)],
    )
    def test_reference_shapes(self, tmp_path, capsys, n, total, golden):
        path = write_counts_labels(tmp_path, "ds", make_counts(n, total, golden))
        assert main(["stats", "--labels", str(path)]) == 0
        payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert payload["classes"] == n
        assert payload["images"] == total
        assert abs(payload["ir"] - golden) <= 1e-3

    def test_single_sample(self, tmp_path, capsys):
        path = write_counts_labels(tmp_path, "one", [1])
        assert main(["stats", "--labels", str(path)]) == 0
        payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert payload == {"classes": 1, "images": 1, "mean": 1.0, "std": 0.0, "ir": 0.0}

    def test_missing_file(self, tmp_path):
        assert main(["stats", "--labels", str(tmp_path / "nope.labels")]) == 1


class TestInduce:
    def test_success_and_report_roundtrip(self, tmp_path, capsys):
        centers = blob_centers(10, 4, 5.0, 1)
        store, oracle = sample_blobs(centers, [60] * 10, 1.0, 2)
        emb, lab = write_dataset(tmp_path, "full", store, oracle)
        out_lab = tmp_path / "pruned.labels"
        out_rep = tmp_path / "report.json"
        code = main([
            "induce", "--embeddings", str(emb), "--labels", str(lab),
            "--target-ir", "0.5", "--min-per-class", "10", "--seed", "3",
            "--out-labels", str(out_lab), "--out-report", str(out_rep),
        ])
        assert code == 0
        report = json.loads(out_rep.read_text())
        assert abs(report["ir"] - 0.5) <= 0.01
        # stats recomputed from the pruned labels equal the embedded report
        capsys.readouterr()
        assert main(["stats", "--labels", str(out_lab)]) == 0
        payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert payload["ir"] == pytest.approx(report["ir"])
        assert payload["images"] == sum(report["per_class"])
        # the embedded ratio is exactly what its own count vector recomputes to
        assert imbalance_ratio(report["per_class"]).ir == report["ir"]

    def test_pruned_embeddings_align_with_pruned_labels(self, tmp_path):
        from albalance.dataset import load_dataset

        centers = blob_centers(6, 4, 5.0, 1)
        store, oracle = sample_blobs(centers, [40] * 6, 1.0, 2)
        emb, lab = write_dataset(tmp_path, "full", store, oracle)
        out_emb = tmp_path / "pruned.alemb"
        out_lab = tmp_path / "pruned.labels"
        code = main([
            "induce", "--embeddings", str(emb), "--labels", str(lab),
            "--target-ir", "0.4", "--min-per-class", "8", "--seed", "3",
            "--out-labels", str(out_lab), "--out-report", str(tmp_path / "r.json"),
            "--out-embeddings", str(out_emb),
        ])
        assert code == 0
        pruned_store, pruned_oracle = load_dataset(out_emb, out_lab)
        assert pruned_store.n_samples == pruned_oracle.n_samples < store.n_samples
        # retained rows carry the original vectors for their sample names
        by_name = dict(zip(store.sample_names, store.vectors))
        normed = {n: v / np.linalg.norm(v) for n, v in by_name.items()}
        for name, row in zip(pruned_store.sample_names, pruned_store.vectors):
            assert np.allclose(row, normed[name], atol=1e-6)

    def test_missing_input(self, tmp_path):
        code = main([
            "induce", "--embeddings", str(tmp_path / "x.alemb"),
            "--labels", str(tmp_path / "x.labels"),
            "--target-ir", "0.5", "--out-labels", str(tmp_path / "o.labels"),
            "--out-report", str(tmp_path / "o.json"),
        ])
        assert code == 1

    def test_infeasible_target(self, tmp_path):
        centers = blob_centers(3, 4, 5.0, 1)
        store, oracle = sample_blobs(centers, [20, 20, 20], 1.0, 2)
        emb, lab = write_dataset(tmp_path, "full", store, oracle)
        code = main([
            "induce", "--embeddings", str(emb), "--labels", str(lab),
            "--target-ir", "5.0", "--min-per-class", "20",
            "--out-labels", str(tmp_path / "o.labels"),
            "--out-report", str(tmp_path / "o.json"),
        ])
        assert code == 2


class TestRun:
    def test_outputs_shape(self, tmp_path, blob_files):
        emb, lab, temb, tlab = blob_files
        cfg = tmp_path / "run.toml"
        cfg.write_text(run_config_text())
        out = tmp_path / "out"
        code = main([
            "run", "--config", str(cfg), "--embeddings", str(emb), "--labels", str(lab),
            "--test-embeddings", str(temb), "--test-labels", str(tlab),
            "--out-dir", str(out),
        ])
        assert code == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "curves.csv", "run_seed0000.json", "run_seed0001.json",
        ]
        lines = (out / "curves.csv").read_text().splitlines()
        assert lines[0] == "iteration,labeled_count,acc_mean,acc_std,ir_mean,ir_std,scheme"
        assert len(lines) == 4  # header + 3 iterations
        assert lines[1].split(",")[1] == "8"

    def test_byte_identical_reruns(self, tmp_path, blob_files):
        emb, lab, temb, tlab = blob_files
        cfg = tmp_path / "run.toml"
        cfg.write_text(run_config_text())
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main([
                "run", "--config", str(cfg), "--embeddings", str(emb), "--labels", str(lab),
                "--test-embeddings", str(temb), "--test-labels", str(tlab),
                "--out-dir", str(out),
            ]) == 0
            outputs.append({p.name: p.read_bytes() for p in out.iterdir()})
        assert outputs[0] == outputs[1]

    def test_schema_violations_list_all_fields(self, tmp_path, blob_files, capsys):
        emb, lab, temb, tlab = blob_files
        cfg = tmp_path / "bad.toml"
        cfg.write_text(
            """
[run]
iterations = 3
af = "entropy"
scheme_policy = "sometimes"
seeds = [1, -2]

[training]
epochs = "many"
"""
        )
        code = main([
            "run", "--config", str(cfg), "--embeddings", str(emb), "--labels", str(lab),
            "--test-embeddings", str(temb), "--test-labels", str(tlab),
            "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 2
        err = capsys.readouterr().err
        for needle in ("budget", "af", "scheme_policy", "seeds", "epochs"):
            assert needle in err

    def test_partial_outputs_removed_on_failure(self, tmp_path, blob_files, monkeypatch):
        import albalance.cli as cli_mod

        emb, lab, temb, tlab = blob_files
        cfg = tmp_path / "run.toml"
        cfg.write_text(run_config_text(seeds="[0]"))
        out = tmp_path / "out"

        def boom(path, agg):
            raise OSError("disk full")

        monkeypatch.setattr(cli_mod, "write_curves_csv", boom)
        code = main([
            "run", "--config", str(cfg), "--embeddings", str(emb), "--labels", str(lab),
            "--test-embeddings", str(temb), "--test-labels", str(tlab),
            "--out-dir", str(out),
        ])
        assert code == 1
        assert list(out.glob("run_seed*.json")) == []

    def test_csv_locale_independent(self, tmp_path, blob_files):
        emb, lab, temb, tlab = blob_files
        cfg = tmp_path / "run.toml"
        cfg.write_text(run_config_text(seeds="[0]"))
        out = tmp_path / "out"
        assert main([
            "run", "--config", str(cfg), "--embeddings", str(emb), "--labels", str(lab),
            "--test-embeddings", str(temb), "--test-labels", str(tlab),
            "--out-dir", str(out),
        ]) == 0
        raw = (out / "curves.csv").read_bytes()
        assert b"\r" not in raw
        assert b"," in raw and b";" not in raw


class TestCurves:
    def test_idempotent_regeneration(self, tmp_path, blob_files):
        emb, lab, temb, tlab = blob_files
        cfg = tmp_path / "run.toml"
        cfg.write_text(run_config_text())
        out = tmp_path / "out"
        assert main([
            "run", "--config", str(cfg), "--embeddings", str(emb), "--labels", str(lab),
            "--test-embeddings", str(temb), "--test-labels", str(tlab),
            "--out-dir", str(out),
        ]) == 0
        original = (out / "curves.csv").read_bytes()
        regenerated = tmp_path / "regen.csv"
        assert main(["curves", "--records-dir", str(out), "--out", str(regenerated)]) == 0
        assert regenerated.read_bytes() == original

    def test_empty_dir(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["curves", "--records-dir", str(empty)]) == 1

    def test_mixed_configs_rejected(self, tmp_path, blob_files):
        emb, lab, temb, tlab = blob_files
        mixed = tmp_path / "mixed"
        mixed.mkdir()
        for af, seed_name in (("random", "run_seed0000.json"), ("margin", "run_seed0001.json")):
            cfg = tmp_path / f"{af}.toml"
            cfg.write_text(run_config_text(af=af, seeds="[0]"))
            out = tmp_path / f"out_{af}"
            assert main([
                "run", "--config", str(cfg), "--embeddings", str(emb), "--labels", str(lab),
                "--test-embeddings", str(temb), "--test-labels", str(tlab),
                "--out-dir", str(out),
            ]) == 0
            (mixed / seed_name).write_bytes((out / "run_seed0000.json").read_bytes())
        assert main(["curves", "--records-dir", str(mixed)]) == 2


class TestUsage:
    def test_unknown_subcommand_exits_nonzero(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_exits_nonzero(self):
        with pytest.raises(SystemExit) as exc:
            main(["stats", "--labels", "x", "--bogus"])
        assert exc.value.code == 2
