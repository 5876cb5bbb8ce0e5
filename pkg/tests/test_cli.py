import json
from pathlib import Path

import numpy as np
import pytest

from ntksynth import cli
from ntksynth.cli import RunConfig, main
from ntksynth.presets import get_preset, preset_names
from ntksynth.toydata import write_blob_images, write_two_class_table_with_spec


@pytest.fixture(scope="module")
def toy_table(tmp_path_factory):
    root = tmp_path_factory.mktemp("table")
    csv_path, spec_path = root / "table.csv", root / "spec.json"
    write_two_class_table_with_spec(csv_path, spec_path, 300, seed=0)
    return csv_path, spec_path


def fast_args(csv_path, spec_path, out_dir, extra=()):
    return ["--dataset", str(csv_path), "--schema-spec", str(spec_path),
            "--out-dir", str(out_dir), "--ntk-width", "20", "--n-iter", "25",
            "--batch", "40", "--d-code", "4", "--seed", "1", "--n-synth", "150",
            "--eval-seeds", "1", "--gen-hidden", "24_24", "--no-gen-norm",
            "--classifier-iters", "80", *extra]


def test_pipeline_writes_all_artifacts(toy_table, tmp_path):
    csv_path, spec_path = toy_table
    out = tmp_path / "run"
    rc = main(["pipeline", *fast_args(csv_path, spec_path, out, ["--epsilon", "1"])])
    assert rc == 0
    for name in ["embedding.ntke", "schema.json", "real_test.csv", "checkpoint.ntkg",
                 "loss_trace.csv", "synthetic.csv", "report.json", "report.csv",
                 "manifest.json", "run_config.json"]:
        assert (out / name).exists(), name

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["eps"] == 1.0
    for entry in manifest["artifacts"].values():
        blob = (out / entry["path"]).read_bytes()
        import hashlib
        assert hashlib.sha256(blob).hexdigest() == entry["sha256"]


def test_loss_trace_length_matches_n_iter(toy_table, tmp_path):
    csv_path, spec_path = toy_table
    out = tmp_path / "run"
    assert main(["pipeline", *fast_args(csv_path, spec_path, out)]) == 0
    lines = (out / "loss_trace.csv").read_text().strip().splitlines()
    assert lines[0] == "iter,loss"
    assert len(lines) == 1 + 25


def test_embed_prints_sensitivity_relation(toy_table, tmp_path, capsys):
    csv_path, spec_path = toy_table
    out = tmp_path / "run"
    assert main(["embed", *fast_args(csv_path, spec_path, out, ["--epsilon", "1"])]) == 0
    line = capsys.readouterr().out
    fields = dict(kv.split("=") for kv in line.split()[1:])
    assert float(fields["sensitivity"]) == pytest.approx(2.0 / float(fields["m"]))
    assert float(fields["sigma"]) > 0


def test_embed_nonprivate_flagged(toy_table, tmp_path):
    csv_path, spec_path = toy_table
    out = tmp_path / "run"
    assert main(["embed", *fast_args(csv_path, spec_path, out, ["--epsilon", "none"])]) == 0
    from ntksynth.embedding import load_embedding
    emb = load_embedding(out / "embedding.ntke")
    assert not emb.privatized
    assert emb.privacy.calibration == "none"
    assert emb.released


def test_embed_rerun_byte_identical(toy_table, tmp_path):
    csv_path, spec_path = toy_table
    out = tmp_path / "run"
    args = ["embed", *fast_args(csv_path, spec_path, out, ["--epsilon", "1"])]
    assert main(args) == 0
    first = (out / "embedding.ntke").read_bytes()
    assert main(args) == 0
    assert (out / "embedding.ntke").read_bytes() == first


def test_pipeline_deterministic_rerun_in_place(toy_table, tmp_path):
    csv_path, spec_path = toy_table
    out = tmp_path / "run"
    args = ["pipeline", *fast_args(csv_path, spec_path, out, ["--epsilon", "1"])]
    assert main(args) == 0
    snapshots = {name: (out / name).read_bytes()
                 for name in ["loss_trace.csv", "checkpoint.ntkg", "report.json",
                              "synthetic.csv", "embedding.ntke", "manifest.json"]}
    assert main(args) == 0
    for name, blob in snapshots.items():
        assert (out / name).read_bytes() == blob, name


def test_privacy_firewall_raw_data_deleted(tmp_path):
    csv_path, spec_path = tmp_path / "t.csv", tmp_path / "s.json"
    write_two_class_table_with_spec(csv_path, spec_path, 300, seed=2)
    out = tmp_path / "run"
    args = fast_args(csv_path, spec_path, out, ["--epsilon", "1"])
    assert main(["embed", *args]) == 0
    csv_path.unlink()  # raw data gone; downstream must not need it

    assert main(["train", *args]) == 0
    assert main(["generate", *args]) == 0
    assert main(["eval", *args]) == 0
    report = (out / "report.json").read_bytes()
    ckpt = (out / "checkpoint.ntkg").read_bytes()

    assert main(["train", *args]) == 0
    assert main(["generate", *args]) == 0
    assert main(["eval", *args]) == 0
    assert (out / "checkpoint.ntkg").read_bytes() == ckpt
    assert (out / "report.json").read_bytes() == report


def test_generate_empty_n(toy_table, tmp_path):
    csv_path, spec_path = toy_table
    out = tmp_path / "run"
    args = fast_args(csv_path, spec_path, out)
    assert main(["embed", *args]) == 0
    assert main(["train", *args]) == 0
    assert main(["generate", *args, "--n", "0"]) == 0
    assert (out / "synthetic.csv").read_text().strip().splitlines()[0].startswith("age")


def test_image_pipeline_with_sample_grid(tmp_path):
    img_path = tmp_path / "imgs.ntki"
    write_blob_images(img_path, 240, seed=3)
    out = tmp_path / "run"
    rc = main(["pipeline", "--dataset", str(img_path), "--data-format", "images",
               "--out-dir", str(out), "--ntk-width", "16", "--n-iter", "20",
               "--batch", "40", "--d-code", "4", "--seed", "0", "--n-synth", "100",
               "--eval-seeds", "1", "--gen-hidden", "24", "--no-gen-norm",
               "--classifier-iters", "60", "--epsilon", "none"])
    assert rc == 0
    pgm = (out / "samples.pgm").read_bytes()
    assert pgm.startswith(b"P5\n")
    assert (out / "synthetic.ntki").exists()


def test_train_refuses_wrong_feature_seed(toy_table, tmp_path):
    csv_path, spec_path = toy_table
    out = tmp_path / "run"
    args = fast_args(csv_path, spec_path, out)
    assert main(["embed", *args]) == 0
    wrong = [a if a != "1" else "9" for a in args]  # --seed 9 rebuilds another map
    assert main(["train", *wrong]) == 1


def test_validation_errors_exit_one(tmp_path):
    # missing schema spec for csv data
    assert main(["embed", "--dataset", "x.csv", "--out-dir", str(tmp_path)]) == 1
    # malformed width
    assert main(["embed", "--dataset", "x.csv", "--schema-spec", "s.json",
                 "--ntk-width", "abc", "--out-dir", str(tmp_path)]) == 1
    # fc_2l needs two widths
    assert main(["embed", "--dataset", "x.csv", "--schema-spec", "s.json",
                 "--architecture", "fc_2l", "--ntk-width", "30",
                 "--out-dir", str(tmp_path)]) == 1


def test_seeds_fanout_aggregates(toy_table, tmp_path):
    csv_path, spec_path = toy_table
    out = tmp_path / "fan"
    rc = main(["pipeline", *fast_args(csv_path, spec_path, out), "--seeds", "2"])
    assert rc == 0
    agg = json.loads((out / "aggregate_report.json").read_text())
    assert agg["seeds"] == [1, 2]
    assert (out / "seed_1" / "report.json").exists()
    assert (out / "seed_2" / "report.json").exists()
    per_run = [r["averaged"]["logreg"]["accuracy"] for r in agg["runs"]]
    assert agg["averaged"]["logreg"]["accuracy"] == pytest.approx(np.mean(per_run))


def test_preset_adult_matches_published_row():
    p = get_preset("adult")
    assert p["n_iter"] == 50
    assert p["d_code"] == 11
    assert p["ntk_width"] == "30_200"
    assert p["batch"] == 200
    assert p["lr"] == 0.01
    assert p["eps"] == 1


def test_preset_dmnist_row_and_eps_options():
    p = get_preset("dmnist")
    assert (p["n_iter"], p["d_code"], p["ntk_width"], p["batch"]) == (2000, 5, "800", 5000)
    assert p["eps"] == 10
    assert get_preset("dmnist", eps=0.2)["eps"] == 0.2


def test_presets_all_resolve_to_valid_configs():
    for name in preset_names():
        p = get_preset(name)
        cfg = RunConfig.from_sources(None, None, {**p, "dataset": None})
        assert cfg.n_iter >= 0


def test_presets_command_lists(capsys):
    assert main(["presets"]) == 0
    listed = capsys.readouterr().out.split()
    assert "adult" in listed and "desk_digits" in listed


def test_config_file_and_flag_precedence(toy_table, tmp_path):
    csv_path, spec_path = toy_table
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"ntk_width": "12", "n_iter": 7, "batch": 20,
                                    "d_code": 3, "eval_seeds": 1, "gen_hidden": "16",
                                    "gen_norm": False, "classifier_iters": 40,
                                    "n_synth": 80, "eps": "none"}))
    out = tmp_path / "run"
    rc = main(["pipeline", "--config", str(cfg_file), "--dataset", str(csv_path),
               "--schema-spec", str(spec_path), "--out-dir", str(out),
               "--n-iter", "9"])  # flag overrides config file
    assert rc == 0
    echoed = json.loads((out / "run_config.json").read_text())
    assert echoed["n_iter"] == 9
    assert echoed["ntk_width"] == "12"
    lines = (out / "loss_trace.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 9


def test_unknown_config_key_rejected(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"bogus_key": 1}))
    assert main(["embed", "--config", str(cfg_file)]) == 1
