"""Command-line runner tests: config handling, determinism, exit codes."""

from __future__ import annotations

import json
import os

import numpy as np
import pytest

from bayesbody import cli
from bayesbody.errors import ParamOutOfRange
from bayesbody.graph import BayesNet
from bayesbody.synthdata import load_dataset
from bayesbody.training import TrainConfig


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One tiny generated dataset plus a 2-step checkpoint, shared below."""
    root = tmp_path_factory.mktemp("cliwork")
    run = str(root / "run")
    assert cli.main(["generate", "--out", run, "--scenes", "6", "--views",
                     "2", "--seed", "7", "--feature-dim", "8"]) == 0
    assert cli.main(["train", "--out", run, "--hidden-dim", "8",
                     "--grid-level", "0", "--steps", "2", "--lr", "1e-5",
                     "--batch-size", "4"]) == 0
    return root


# config handling ------------------------------------------------------------------


class TestConfig:
    def test_round_trip_is_identity(self):
        cfg = cli.ExperimentConfig(
            seed=11, output_dir="x/y", dataset_dir="d", eval_dataset_dir="e",
            checkpoint="c.json", scenes=5, views=3, people_min=2,
            people_max=3, profile="diverse", feature_dim=16, grid=(4, 6),
            image_size=(256, 128), preset="naive_bayes", hidden_dim=12,
            grid_level=1, regimes=("intr", "none"), threshold=0.25,
            match_rule="pje", pck_mm=90.0,
            train=TrainConfig(learning_rate=1e-3, steps=7, batch_size=2,
                              seed=5, fov_range_deg=(20.0, 90.0),
                              gt_intrinsics_fraction=0.75, point_norm="l2",
                              behind_penalty=0.5))
        again = cli.config_from_dict(
            json.loads(json.dumps(cli.config_to_dict(cfg))))
        assert again == cfg

    def test_toml_and_json_files_parse_alike(self, tmp_path):
        toml = tmp_path / "cfg.toml"
        toml.write_text('scenes = 5\npreset = "naive_bayes"\n'
                        'regimes = ["intr"]\n\n[train]\nsteps = 4\n'
                        'learning_rate = 0.01\n')
        js = tmp_path / "cfg.json"
        js.write_text(json.dumps({"scenes": 5, "preset": "naive_bayes",
                                  "regimes": ["intr"],
                                  "train": {"steps": 4,
                                            "learning_rate": 0.01}}))
        a = cli.config_from_dict(cli.load_config(str(toml)))
        b = cli.config_from_dict(cli.load_config(str(js)))
        assert a == b
        assert a.train.steps == 4 and a.regimes == ("intr",)
        with pytest.raises(ParamOutOfRange):
            cli.load_config("cfg.yaml")

    def test_saved_snapshot_reparses_equal(self, tmp_path):
        cfg = cli.ExperimentConfig(scenes=3, regimes=("intr_dist",))
        path = tmp_path / "snap.json"
        cli.save_config(cfg, str(path))
        assert cli.config_from_dict(cli.load_config(str(path))) == cfg

    def test_validation_rejects_bad_values(self):
        with pytest.raises(ParamOutOfRange):
            cli.ExperimentConfig(regimes=("bogus",))
        with pytest.raises(ParamOutOfRange):
            cli.ExperimentConfig(regimes=())
        with pytest.raises(ParamOutOfRange):
            cli.ExperimentConfig(preset="nope")
        with pytest.raises(ParamOutOfRange):
            cli.ExperimentConfig(profile="nope")
        with pytest.raises(ParamOutOfRange):
            cli.ExperimentConfig(people_min=3, people_max=2)
        with pytest.raises(ParamOutOfRange):
            cli.ExperimentConfig(match_rule="mpjpe")
        with pytest.raises(ParamOutOfRange):
            cli.config_from_dict({"not_a_key": 1})
        with pytest.raises(ParamOutOfRange):
            cli.config_from_dict({"train": {"not_a_key": 1}})

    def test_resolve_paths_defaults_and_env_root(self, monkeypatch):
        monkeypatch.delenv(cli.OUTPUT_ROOT_ENV, raising=False)
        cfg = cli.ExperimentConfig(output_dir="out")
        paths = cli.resolve_paths(cfg)
        assert paths.dataset_dir == os.path.join("out", "dataset")
        assert paths.eval_dataset_dir == paths.dataset_dir
        assert paths.checkpoint == os.path.join("out", "checkpoint.json")
        monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, "/root_of_runs")
        rooted = cli.resolve_paths(cfg)
        assert rooted.output_dir == "/root_of_runs/out"
        assert rooted.dataset_dir == "/root_of_runs/out/dataset"
        abs_cfg = cli.ExperimentConfig(output_dir="/abs/out")
        assert cli.resolve_paths(abs_cfg).output_dir == "/abs/out"

    def test_flags_override_config_file(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"scenes": 6, "feature_dim": 8,
                                        "views": 1}))
        out = str(tmp_path / "gen")
        assert cli.main(["generate", "--config", str(cfg_file), "--out", out,
                         "--scenes", "4"]) == 0
        with open(os.path.join(out, "dataset", "manifest.json")) as fh:
            assert json.load(fh)["count"] == 4
        with open(os.path.join(out, "config.json")) as fh:
            snap = json.load(fh)
        assert snap["scenes"] == 4 and snap["feature_dim"] == 8


# regimes --------------------------------------------------------------------------


class TestKnownValues:
    def test_clamps_per_regime(self, workdir):
        view = load_dataset(str(workdir / "run" / "dataset"))[0].views[0]
        none = cli.known_values_for("none", view)
        assert none.intrinsics is None and none.per_cell == {}
        intr = cli.known_values_for("intr", view)
        assert intr.intrinsics is view.k and intr.per_cell == {}
        dist = cli.known_values_for("intr_dist", view)
        shape = cli.known_values_for("intr_shape", view)
        both = cli.known_values_for("intr_shape_dist", view)
        assert set(both.per_cell) == {g.cell for g in view.gt}
        for gt in view.gt:
            enc = np.log(gt.t[2] / view.k.f)
            assert np.allclose(dist.per_cell[gt.cell]["encoded_depth"],
                               [enc], atol=1e-15)
            assert "shape" not in dist.per_cell[gt.cell]
            assert np.array_equal(shape.per_cell[gt.cell]["shape"], gt.beta)
            assert "encoded_depth" not in shape.per_cell[gt.cell]
            assert set(both.per_cell[gt.cell]) == {"encoded_depth", "shape"}
        with pytest.raises(ParamOutOfRange):
            cli.known_values_for("dist", view)


# commands -------------------------------------------------------------------------


class TestGenerate:
    def test_rerun_is_byte_identical(self, workdir, tmp_path):
        out = str(tmp_path / "again")
        assert cli.main(["generate", "--out", out, "--scenes", "6",
                         "--views", "2", "--seed", "7",
                         "--feature-dim", "8"]) == 0
        for name in ("manifest.json", "stats.json", "scene_00000.json"):
            assert _read(os.path.join(out, "dataset", name)) == \
                _read(workdir / "run" / "dataset" / name)

    def test_stats_report_written(self, workdir):
        with open(workdir / "run" / "dataset" / "stats.json") as fh:
            payload = json.load(fh)
        assert payload["dataset"]["n_scenes"] == 6
        assert "ambiguity_probe" in payload


class TestTrain:
    def test_zero_lr_checkpoint_equals_initialization(self, workdir, tmp_path):
        out = str(tmp_path / "zlr")
        dataset = str(workdir / "run" / "dataset")
        assert cli.main(["train", "--out", out, "--dataset", dataset,
                         "--hidden-dim", "8", "--grid-level", "0",
                         "--steps", "2", "--lr", "0", "--batch-size", "4",
                         "--seed", "3"]) == 0
        loaded = BayesNet.load(os.path.join(out, "checkpoint.json"))
        fresh = BayesNet(preset="condimen", feature_dim=8, hidden_dim=8,
                         n_bones=53, beta_dim=11, gamma_dim=10, seed=3,
                         grid_level=0)
        for a, b in zip(loaded.parameters, fresh.parameters):
            assert np.array_equal(a.value, b.value)

    def test_rerun_is_byte_identical(self, workdir, tmp_path):
        out = str(tmp_path / "retrain")
        dataset = str(workdir / "run" / "dataset")
        assert cli.main(["train", "--out", out, "--dataset", dataset,
                         "--hidden-dim", "8", "--grid-level", "0",
                         "--steps", "2", "--lr", "1e-5",
                         "--batch-size", "4"]) == 0
        assert _read(os.path.join(out, "loss.csv")) == \
            _read(workdir / "run" / "loss.csv")
        assert _read(os.path.join(out, "checkpoint.json")) == \
            _read(workdir / "run" / "checkpoint.json")

    def test_non_finite_loss_exits_nonzero(self, workdir, tmp_path, capsys):
        src = load_dataset(str(workdir / "run" / "dataset"))[:2]
        broken = str(tmp_path / "broken")
        from bayesbody.synthdata import save_dataset
        save_dataset(src, broken)
        for entry in json.load(open(os.path.join(broken, "manifest.json")))["scenes"]:
            path = os.path.join(broken, entry["file"])
            scene = json.load(open(path))
            for view in scene["views"]:
                for person in view["gt"]:
                    person["beta"][0] = float("nan")
            with open(path, "w") as fh:
                json.dump(scene, fh)
        rc = cli.main(["train", "--out", str(tmp_path / "bout"), "--dataset",
                       broken, "--hidden-dim", "8", "--grid-level", "0",
                       "--steps", "2", "--lr", "1e-5", "--batch-size", "4"])
        assert rc == 1
        assert "non-finite" in capsys.readouterr().err


class TestEval:
    def _run(self, workdir, out, views, extra=()):
        run = workdir / "run"
        return cli.main(["eval", "--out", str(out), "--checkpoint",
                         str(run / "checkpoint.json"), "--eval-dataset",
                         str(run / "dataset"), "--views", str(views),
                         *extra])

    def test_outputs_and_rerun_identical(self, workdir, tmp_path):
        a, b = tmp_path / "ev_a", tmp_path / "ev_b"
        extra = ("--regimes", "none", "intr", "--threshold", "0.02")
        assert self._run(workdir, a, 1, extra) == 0
        assert self._run(workdir, b, 1, extra) == 0
        names = ["comparison_views1.csv", "none_views1_records.csv",
                 "intr_views1_records.csv", "none_views1_records.jsonl",
                 "intr_views1_report.json"]
        for name in names:
            assert _read(a / name) == _read(b / name)
        with open(a / "comparison_views1.csv") as fh:
            lines = fh.read().splitlines()
        assert lines[0].startswith("regime,views,pve_mm")
        assert len(lines) == 3
        assert lines[1].split(",")[0] == "none"
        with open(a / "intr_views1_report.json") as fh:
            report = json.load(fh)
        assert report["n_gt"] == sum(
            len(s.views[0].gt)
            for s in load_dataset(str(workdir / "run" / "dataset")))
        with open(a / "none_views1_records.csv") as fh:
            assert len(fh.read().splitlines()) == report["n_gt"] + 1

    def test_multiview_fusion_path(self, workdir, tmp_path):
        out = tmp_path / "ev2"
        assert self._run(workdir, out, 2,
                         ("--regimes", "intr", "--threshold", "0.02")) == 0
        assert (out / "comparison_views2.csv").exists()
        assert (out / "intr_views2_records.jsonl").exists()

    def test_too_many_views_is_an_error(self, workdir, tmp_path, capsys):
        assert self._run(workdir, tmp_path / "ev3", 3,
                         ("--regimes", "intr")) == 2
        assert "views" in capsys.readouterr().err

    def test_missing_checkpoint_is_an_error(self, workdir, tmp_path, capsys):
        rc = cli.main(["eval", "--out", str(tmp_path / "evx"), "--checkpoint",
                       str(tmp_path / "no_such.json"), "--eval-dataset",
                       str(workdir / "run" / "dataset")])
        assert rc == 2
        assert "no_such" in capsys.readouterr().err


class TestStats:
    def test_matches_generate_report(self, workdir, tmp_path):
        out = str(tmp_path / "st")
        assert cli.main(["stats", "--out", out, "--dataset",
                         str(workdir / "run" / "dataset")]) == 0
        assert _read(os.path.join(out, "stats.json")) == \
            _read(workdir / "run" / "dataset" / "stats.json")

    def test_output_root_env_var(self, workdir, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path))
        assert cli.main(["stats", "--out", "envrun", "--dataset",
                         str(workdir / "run" / "dataset")]) == 0
        assert (tmp_path / "envrun" / "stats.json").exists()
