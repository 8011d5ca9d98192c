import json
import struct

import numpy as np
import pytest

from poselift.cli import dispatch, main, parse_run_config
from poselift.core import load_mask, load_sequence, save_sequence
from poselift.synth import make_dataset


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("data")
    make_dataset(6, ["walk", "sit"], t=9, out_dir=path, seed=3,
                 train_fraction=0.67)
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, dataset_dir):
    out = tmp_path_factory.mktemp("run")
    config = {
        "version": "1",
        "model": {"variant": "DTF", "t": 9, "j": 17, "mvg_layers": 1,
                  "srm_layers": 1, "ifm_layers": 1, "embed_dim": 8,
                  "n_heads": 2},
        "train": {"steps": 6, "batch_size": 4, "seed": 5,
                  "occlusion_mode": "OAT", "n_missing_per_frame": 4,
                  "guidance": {"f_past": 3, "f_future": 3}},
        "data_dir": str(dataset_dir),
        "out_dir": str(out),
        "model_seed": 2,
    }
    cfg_path = out / "run.json"
    out.mkdir(exist_ok=True)
    cfg_path.write_text(json.dumps(config))
    assert main(["train", "--config", str(cfg_path)]) == 0
    return out


class TestDispatch:
    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            dispatch(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            dispatch(["synth", "--wat", "1"])
        assert exc.value.code == 2

    def test_runtime_error_exits_one(self, tmp_path):
        assert dispatch(["eval", "--checkpoint", str(tmp_path / "none.bin"),
                         "--data", str(tmp_path), "--out",
                         str(tmp_path / "r.json")]) == 1


class TestSynthCommand:
    def test_writes_dataset(self, tmp_path):
        assert main(["synth", "--n", "4", "--frames", "9", "--actions", "walk",
                     "--seed", "1", "--out", str(tmp_path / "d")]) == 0
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        assert len(manifest["sequences"]) == 4


class TestOccludeGuide:
    def test_occlude_then_guide(self, dataset_dir, tmp_path):
        src = dataset_dir / "seq_0000.pseq2d"
        occluded = tmp_path / "occ.pseq2d"
        mask = tmp_path / "occ.mask.json"
        guided = tmp_path / "guided.pseq2d"
        assert main(["occlude", "--n-missing", "6", "--seed", "9",
                     str(src), str(occluded), str(mask)]) == 0
        m = load_mask(mask)
        assert ((~m.present).sum(axis=1) == 6).all()
        assert main(["guide", "--fp", "3", "--ff", "3", "--fallback", "whole",
                     str(occluded), str(mask), str(guided)]) == 0
        out = load_sequence(guided)
        assert out.data[:, :, 2].min() >= 0.0

    def test_guide_on_clean_sequence_is_byte_identical(self, dataset_dir, tmp_path):
        src = dataset_dir / "seq_0001.pseq2d"
        seq = load_sequence(src)
        mask_path = tmp_path / "full.mask.json"
        from poselift.core import OcclusionMask, save_mask
        save_mask(OcclusionMask(np.ones((seq.frames, seq.joints), dtype=bool),
                                seed=0, n_missing_per_frame=0), mask_path)
        out_path = tmp_path / "clean.pseq2d"
        assert main(["guide", str(src), str(mask_path), str(out_path)]) == 0
        assert out_path.read_bytes() == src.read_bytes()


class TestTrainEvalCompare:
    def test_train_writes_checkpoint_and_log(self, run_dir):
        assert (run_dir / "checkpoint.bin").exists()
        lines = (run_dir / "metrics.ndjson").read_text().splitlines()
        records = [json.loads(l) for l in lines]
        assert [r["step"] for r in records] == list(range(6))
        assert all(np.isfinite(r["loss"]) for r in records)

    def test_eval_writes_report(self, run_dir, dataset_dir, tmp_path):
        out = tmp_path / "report.json"
        assert main(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"),
                     "--data", str(dataset_dir), "--n-missing", "4",
                     "--seed", "2", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert set(report["aggregate"]) == {"mpjpe_p1", "mpjpe_p2", "pck", "auc"}
        assert report["per_action"]

    def test_compare_emits_row_per_setting_and_mode(self, run_dir, dataset_dir,
                                                    tmp_path):
        out = tmp_path / "cmp"
        assert main(["compare", "--checkpoint", str(run_dir / "checkpoint.bin"),
                     "--data", str(dataset_dir), "--n-missing", "4,8",
                     "--seeds", "1", "--out", str(out)]) == 0
        rows = json.loads((tmp_path / "cmp.json").read_text())["rows"]
        assert {(r["n_missing"], r["mode"]) for r in rows} == \
            {(4, "nog"), (4, "guided"), (8, "nog"), (8, "guided")}
        csv_lines = (tmp_path / "cmp.csv").read_text().strip().splitlines()
        assert len(csv_lines) == 5  # header + 4 rows


class TestGradcheckCommand:
    def test_exit_zero_and_table(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "dtf_end_to_end" in out
        assert "FAIL" not in out


class TestRunConfig:
    def base(self, dataset_dir):
        return {
            "version": "1",
            "model": {"variant": "SVG", "t": 9, "j": 17, "embed_dim": 8,
                      "n_heads": 2},
            "train": {"steps": 1},
            "data_dir": str(dataset_dir),
            "out_dir": "out",
        }

    def test_missing_version_rejected(self, dataset_dir):
        doc = self.base(dataset_dir)
        del doc["version"]
        with pytest.raises(ValueError, match="version"):
            parse_run_config(doc)

    def test_unknown_top_key_rejected(self, dataset_dir):
        doc = self.base(dataset_dir)
        doc["learning_rate"] = 0.5
        with pytest.raises(ValueError, match="unknown run config keys"):
            parse_run_config(doc)

    def test_unknown_model_key_rejected(self, dataset_dir):
        doc = self.base(dataset_dir)
        doc["model"]["hidden"] = 12
        with pytest.raises(ValueError, match="unknown model config keys"):
            parse_run_config(doc)

    def test_unknown_train_key_rejected(self, dataset_dir):
        doc = self.base(dataset_dir)
        doc["train"]["momentum"] = 0.5
        with pytest.raises(ValueError, match="unknown train config keys"):
            parse_run_config(doc)
