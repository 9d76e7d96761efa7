from __future__ import annotations

import json

import numpy as np
import pytest

from hgmeta import cli
from hgmeta import tensor as T
from hgmeta.artifact import load_run_artifact, save_run_artifact, state_from_artifact
from hgmeta.data import SyntheticSpec, generate_synthetic, save_dataset
from hgmeta.trainer import TrainSettings, ScheduleSpec, train

from test_data import write_toy_dataset


def tiny_config(tmp_path, **overrides):
    doc = {
        "dataset": {
            "synthetic": {
                "nodes": 24,
                "classes": 2,
                "hyperedges": 14,
                "size_range": [2, 4],
                "dim": 4,
                "noise": 0.4,
            }
        },
        "model": {"layers": 2, "hidden": 6},
        "partition": {"k": 2},
        "mwn": {"hidden": 8},
        "train": {"steps": 3},
        "seed": 7,
        "output": str(tmp_path / "run.json"),
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


class TestTrainCommand:
    def test_train_succeeds_and_writes_artifact(self, tmp_path, capsys):
        rc = cli.main(["train", str(tiny_config(tmp_path))])
        assert rc == 0
        out = capsys.readouterr().out
        assert "test_acc_blend=" in out and "mean_alpha_task0=" in out
        artifact = load_run_artifact(tmp_path / "run.json")
        assert len(artifact.history) == 3

    def test_same_config_gives_byte_identical_artifacts(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert cli.main(["train", str(cfg)]) == 0
        first = (tmp_path / "run.json").read_bytes()
        assert cli.main(["train", str(cfg)]) == 0
        assert (tmp_path / "run.json").read_bytes() == first

    def test_zero_steps_yields_empty_history(self, tmp_path):
        cfg = tiny_config(tmp_path, train={"steps": 0})
        assert cli.main(["train", str(cfg)]) == 0
        artifact = load_run_artifact(tmp_path / "run.json")
        assert artifact.history == []

    def test_unknown_config_key_exits_2(self, tmp_path):
        cfg = tiny_config(tmp_path, extra_section={"x": 1})
        assert cli.main(["train", str(cfg)]) == 2

    def test_unknown_nested_key_exits_2(self, tmp_path):
        cfg = tiny_config(tmp_path, model={"layers": 2, "widthh": 64})
        assert cli.main(["train", str(cfg)]) == 2

    def test_unknown_synthetic_key_exits_2(self, tmp_path):
        cfg = tiny_config(tmp_path, dataset={"synthetic": {"nodes": 24, "n_edges": 14}})
        assert cli.main(["train", str(cfg)]) == 2

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_numeric_blowup_exits_4(self, tmp_path):
        cfg = tiny_config(
            tmp_path,
            dataset={"synthetic": {"nodes": 24, "classes": 2, "hyperedges": 10, "dim": 4, "signal": 1e200, "noise": 0.0}},
        )
        assert cli.main(["train", str(cfg)]) == 4

    def test_missing_dataset_dir_exits_3(self, tmp_path):
        doc = json.loads(tiny_config(tmp_path).read_text())
        doc["dataset"] = {"path": str(tmp_path / "nope")}
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps(doc))
        assert cli.main(["train", str(cfg)]) == 3

    def test_save_dataset_flag_dumps_files(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert cli.main(["train", str(cfg), "--save-dataset", str(tmp_path / "ds")]) == 0
        assert (tmp_path / "ds" / "hyperedges.txt").exists()


def test_documented_example_config_parses():
    from hgmeta.config import parse_config

    doc = {
        "dataset": {
            "synthetic": {
                "nodes": 200,
                "classes": 3,
                "hyperedges": 150,
                "homophily": 0.9,
                "noise": 0.5,
            }
        },
        "model": {"layers": 2, "hidden": 64},
        "partition": {"k": 3},
        "mwn": {"hidden": 100, "output_mode": "complementary"},
        "schedules": {"kind": "inverse-sqrt", "c1": 0.02, "c2": 1.0, "m_hat": 10.0},
        "train": {"steps": 200},
        "seed": 0,
        "output": "run.json",
    }
    cfg = parse_config(doc)
    assert cfg.settings.steps == 200
    assert cfg.settings.hidden == 64
    assert cfg.echo["mwn"]["log1p"] is False  # defaults are materialized


class TestEvalCommand:
    def test_eval_reproduces_train_accuracy(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path)
        assert cli.main(["train", str(cfg)]) == 0
        train_out = capsys.readouterr().out
        train_acc = [l for l in train_out.splitlines() if l.startswith("test_acc_blend=")][0]
        assert cli.main(["eval", str(tmp_path / "run.json"), "--regen", "--mode", "blend"]) == 0
        eval_out = capsys.readouterr().out
        eval_acc = [l for l in eval_out.splitlines() if l.startswith("accuracy=")][0]
        assert train_acc.split("=")[1] == eval_acc.split("=")[1]

    def test_eval_single_branch_mode(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path)
        assert cli.main(["train", str(cfg)]) == 0
        capsys.readouterr()
        assert cli.main(["eval", str(tmp_path / "run.json"), "--regen", "--mode", "ss"]) == 0
        out = capsys.readouterr().out
        assert "mode=ss" in out
        assert "class0: precision=" in out

    def test_dimension_mismatch_exits_3(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert cli.main(["train", str(cfg)]) == 0
        other = generate_synthetic(SyntheticSpec(nodes=20, classes=2, hyperedges=8, dim=9), seed=1)
        save_dataset(other, tmp_path / "other")
        rc = cli.main(["eval", str(tmp_path / "run.json"), "--dataset", str(tmp_path / "other")])
        assert rc == 3

    def test_missing_dataset_arg_exits_3(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert cli.main(["train", str(cfg)]) == 0
        assert cli.main(["eval", str(tmp_path / "run.json")]) == 3


class TestAnalyzeOverlap:
    def test_hub_toy_row_shows_six_decimals(self, tmp_path, capsys):
        root = write_toy_dataset(tmp_path / "toy")
        assert cli.main(["analyze-overlap", str(root)]) == 0
        out = capsys.readouterr().out
        assert "0 1.714286 " in out

    def test_single_hyperedge_dataset_has_one_level(self, tmp_path, capsys):
        root = tmp_path / "single"
        root.mkdir()
        (root / "hyperedges.txt").write_text("0 1 2\n")
        (root / "features.csv").write_text("\n".join(["1.0"] * 3) + "\n")
        (root / "labels.csv").write_text("0,0\n1,0\n2,1\n")
        (root / "splits.json").write_text(json.dumps({"train": [0], "meta": [1], "test": [2]}))
        assert cli.main(["analyze-overlap", str(root)]) == 0
        out = capsys.readouterr().out
        assert "centroids=[1.0]" in out
        assert "level0: 3 nodes" in out

    def test_csv_output(self, tmp_path, capsys):
        root = write_toy_dataset(tmp_path / "toy")
        csv_path = tmp_path / "overlap.csv"
        assert cli.main(["analyze-overlap", str(root), "--csv", str(csv_path)]) == 0
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "node_id,p,level"
        assert len(lines) == 8

    def test_levels_cover_range_on_spread_synthetic(self, tmp_path, capsys):
        ds = generate_synthetic(
            SyntheticSpec(nodes=60, classes=2, hyperedges=70, size_range=(2, 6)), seed=3
        )
        save_dataset(ds, tmp_path / "ds")
        assert cli.main(["analyze-overlap", str(tmp_path / "ds"), "--k", "3"]) == 0
        out = capsys.readouterr().out
        for level in range(3):
            assert f"level{level}:" in out


class TestEmitLosses:
    def test_zero_weight_checkpoint_gives_log_c(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(nodes=20, classes=3, hyperedges=10), seed=2)
        save_dataset(ds, tmp_path / "ds")
        settings = TrainSettings(steps=0, k=2, hidden=4, mwn_hidden=4, seed=0)
        state, metrics = train(ds, settings)
        zeroed = state.hgnn.with_vec(np.zeros(state.hgnn.flatten().size))
        state.hgnn = zeroed
        save_run_artifact(tmp_path / "run.json", {"seed": 0, "dataset": {"path": "x"}}, state, metrics)
        rc = cli.main(
            [
                "emit-losses",
                str(tmp_path / "run.json"),
                "--dataset",
                str(tmp_path / "ds"),
                "--losses-csv",
                str(tmp_path / "losses.csv"),
            ]
        )
        assert rc == 0
        lines = (tmp_path / "losses.csv").read_text().splitlines()
        assert len(lines) == 1 + len(ds.splits.train)
        for line in lines[1:]:
            _, l1, l2 = line.split(",")
            assert float(l1) == pytest.approx(np.log(3.0), rel=1e-12)
            assert float(l2) == pytest.approx(np.log(3.0), rel=1e-12)

    def test_history_rows_equal_steps(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert cli.main(["train", str(cfg)]) == 0
        rc = cli.main(
            [
                "emit-losses",
                str(tmp_path / "run.json"),
                "--regen",
                "--losses-csv",
                str(tmp_path / "l.csv"),
                "--history-csv",
                str(tmp_path / "h.csv"),
            ]
        )
        assert rc == 0
        history = (tmp_path / "h.csv").read_text().splitlines()
        assert len(history) == 1 + 3


class TestGradCheck:
    def test_default_toy_passes(self, capsys):
        assert cli.main(["grad-check", "--nodes", "6", "--hidden", "3", "--mwn-hidden", "4"]) == 0
        out = capsys.readouterr().out
        assert "result=ok" in out

    def test_zero_lam1_reports_exact_zero_meta_gradient(self, capsys):
        assert cli.main(["grad-check", "--nodes", "6", "--hidden", "3", "--lam1", "0.0"]) == 0
        out = capsys.readouterr().out
        assert "meta_grad_norm=0.000000e+00" in out

    def test_corrupted_backward_exits_5(self, monkeypatch, capsys):
        # negative control: break one derivative and the check must fail
        monkeypatch.setattr(T, "_d_elu", lambda x, out: np.where(x > 0.0, 1.0, 0.5 * (out + 1.0)))
        rc = cli.main(["grad-check", "--nodes", "6", "--hidden", "3", "--mwn-hidden", "4"])
        assert rc == 5
        assert "result=tolerance-breach" in capsys.readouterr().out


class TestArtifactRoundTrip:
    def test_checkpoints_restore_bitwise(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(nodes=24, classes=2, hyperedges=12, dim=4), seed=4)
        settings = TrainSettings(
            steps=2, k=2, hidden=5, mwn_hidden=6, seed=1,
            schedule1=ScheduleSpec(c=0.02), schedule2=ScheduleSpec(c=0.5),
        )
        state, metrics = train(ds, settings)
        save_run_artifact(tmp_path / "a.json", {"seed": 1}, state, metrics)
        artifact = load_run_artifact(tmp_path / "a.json")
        np.testing.assert_array_equal(artifact.hgnn.flatten(), state.hgnn.flatten())
        np.testing.assert_array_equal(artifact.mwn.flatten(), state.mwn.flatten())
        np.testing.assert_array_equal(artifact.partition.centroids, state.partition.centroids)
        assert artifact.metrics == metrics
        restored = state_from_artifact(artifact)
        assert restored.step == state.step
        assert [r.to_dict() for r in restored.history] == [r.to_dict() for r in state.history]

    def test_history_row_count_matches_steps(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(nodes=24, classes=2, hyperedges=12, dim=4), seed=5)
        state, metrics = train(ds, TrainSettings(steps=4, k=2, hidden=5, mwn_hidden=6, seed=2))
        save_run_artifact(tmp_path / "a.json", {}, state, metrics)
        assert len(load_run_artifact(tmp_path / "a.json").history) == 4
