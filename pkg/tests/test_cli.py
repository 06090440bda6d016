import csv
import json

import numpy as np
import pytest

from epswae import cli, config
from epswae.data import load_dataset, load_matrix
from epswae.trainer import load_model

SMALL = """\
data.n_samples = 500
train.epochs = 2
train.batch_size = 50
geodesic.n_samples = 120
bench.reps = 3
bench.dims = 3, 5
"""


def run(argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    assert run(["gen", "--config", cfg, "--out", root / "gen"]) == 0
    assert run(["train", "--config", cfg, "--dataset", root / "gen/dataset.csv", "--out", root / "train"]) == 0
    return root


def error_record(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_gen_default_shape(tmp_path):
    assert run(["gen", "--out", tmp_path]) == 0
    ds = load_dataset(tmp_path / "dataset.csv")
    assert ds.inputs.shape == (10000, 40)
    assert load_matrix(tmp_path / "embedding.csv").shape == (40, 3)


def test_gen_same_seed_same_files(work, tmp_path):
    assert run(["gen", "--config", work / "small.cfg", "--out", tmp_path]) == 0
    for name in ("dataset.csv", "embedding.csv", "spiral.svg"):
        assert (tmp_path / name).read_bytes() == (work / "gen" / name).read_bytes()


def test_gen_seed_flag_changes_data(work, tmp_path):
    assert run(["gen", "--config", work / "small.cfg", "--seed", 4, "--out", tmp_path]) == 0
    assert (tmp_path / "dataset.csv").read_bytes() != (work / "gen" / "dataset.csv").read_bytes()
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 4


def test_unwritable_out_fails_before_work(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(["gen", "--out", blocker / "sub"]) == 1
    rec = error_record(capsys)
    assert rec["error"] == "CliError" and "not writable" in rec["message"]


def test_manifest_contents(work):
    m = json.loads((work / "train" / "manifest.json").read_text())
    file_cfg = config.load(work / "small.cfg")
    for key, value in file_cfg.items():
        assert m["config"][key] == value
    assert m["command"] == "train" and m["seed"] == 0
    assert m["dataset_sha256"] == cli.sha256_path(work / "gen" / "dataset.csv")
    for out in m["outputs"]:
        assert (work / "train" / out["path"]).exists()
    assert {"checkpoint/encoder.json", "log.jsonl", "metrics.json", "loss.csv", "latent.svg"} <= {o["path"] for o in m["outputs"]}


def test_swae_mode_has_no_prior_checkpoint(work, tmp_path):
    assert run(["train", "--config", work / "small.cfg", "--dataset", work / "gen/dataset.csv",
                "--mode", "swae", "--out", tmp_path]) == 0
    assert not (tmp_path / "checkpoint" / "prior_encoder.json").exists()
    phases = {json.loads(l)["phase"] for l in (tmp_path / "log.jsonl").read_text().splitlines()}
    assert phases == {"AE"}


def test_ablation_flags_reach_config(work, tmp_path):
    assert run(["train", "--config", work / "small.cfg", "--dataset", work / "gen/dataset.csv",
                "--linear-sw", "--no-fsc", "--set", "train.epochs=1", "--out", tmp_path]) == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["config"]["train.nonlinearity"] == "identity"
    assert m["config"]["train.fsc_enabled"] is False
    assert m["config"]["train.epochs"] == 1


def test_eval_matches_train_metrics(work, tmp_path):
    assert run(["eval", "--config", work / "small.cfg", "--checkpoint", work / "train/checkpoint",
                "--dataset", work / "gen/dataset.csv", "--out", tmp_path]) == 0
    assert (tmp_path / "metrics.json").read_text() == (work / "train" / "metrics.json").read_text()


def interp(work, out, *extra):
    return run(["interpolate", "--config", work / "small.cfg", "--checkpoint", work / "train/checkpoint",
                "--dataset", work / "gen/dataset.csv", "--out", out, *extra])


def test_linear_two_points_are_endpoint_latents(work, tmp_path):
    assert interp(work, tmp_path, "--endpoints", 3, 9, "--method", "linear", "--n-points", 2) == 0
    path = load_matrix(tmp_path / "path.csv")
    model = load_model(work / "train/checkpoint")
    want = model.encode(load_dataset(work / "gen/dataset.csv").inputs[[3, 9]])
    # batched and unbatched matmuls may differ in the last bit
    assert np.allclose(path, want, rtol=0, atol=1e-12)


def test_geodesic_outputs(work, tmp_path):
    assert interp(work, tmp_path, "--endpoints", 3, 9, "--embedding", work / "gen/embedding.csv",
                  "--h", 1, "--densify") == 0
    meta = json.loads((tmp_path / "path.json").read_text())
    assert meta["dataset_rows"][0] == 3 and meta["dataset_rows"][-1] == 9
    assert meta["h"] == 1.0 and meta["k"] == 5 and meta["n_samples"] == 120
    assert meta["n_points"] == 2 * len(meta["nodes"]) - 1
    if meta["linear_energy_on_graph"] is not None:
        assert meta["energy"] <= meta["linear_energy_on_graph"]
    assert load_matrix(tmp_path / "path_3d.csv").shape == (meta["n_points"], 3)
    with (tmp_path / "samples.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["tag"] for r in rows[:3]] == ["endpoint", "endpoint", "posterior"]
    assert (tmp_path / "interpolation.svg").read_text().lstrip().startswith("<?xml")


def test_connectivity_failure_record(work, tmp_path, capsys):
    code = interp(work, tmp_path, "--endpoints", 3, 9, "--k", 1, "--set", "geodesic.t_max=1.0")
    assert code == 1
    rec = error_record(capsys)
    assert rec["error"] == "GraphDisconnected" and rec["n_components"] > 1


def test_bad_endpoint_record(work, tmp_path, capsys):
    assert interp(work, tmp_path, "--endpoints", 3, 100000) == 1
    assert "endpoint" in error_record(capsys)["message"]


def test_missing_dataset_record(tmp_path, capsys):
    assert run(["train", "--dataset", tmp_path / "nope.csv", "--out", tmp_path / "o"]) == 1
    rec = error_record(capsys)
    assert rec["command"] == "train" and "nope.csv" in rec["message"]


def test_bad_config_key_record(tmp_path, capsys):
    assert run(["gen", "--set", "data.colour=blue", "--out", tmp_path]) == 1
    assert "data.colour" in error_record(capsys)["message"]


def test_bench_csv(work, tmp_path):
    assert run(["bench", "--config", work / "small.cfg", "--kinds", "sine_shear,cubic", "--out", tmp_path]) == 0
    with (tmp_path / "bench.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0])[:7] == ["kind", "d", "N", "L", "M", "mean_seconds", "std_seconds"]
    assert [(r["kind"], r["d"]) for r in rows] == [("sine_shear", "3"), ("cubic", "3"), ("sine_shear", "5"), ("cubic", "5")]
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert all(not o["deterministic"] for o in m["outputs"] if o["path"].startswith("bench"))


def test_bench_loss_curves(work, tmp_path):
    assert run(["bench", "--config", work / "small.cfg", "--reps", 1, "--dims", "3", "--set", "train.epochs=1",
                "--dataset", work / "gen/dataset.csv", "--out", tmp_path]) == 0
    with (tmp_path / "loss_by_kind.csv").open() as fh:
        header = next(csv.reader(fh))
    assert header == ["epoch", "identity", "sine_shear", "cubic", "quintic"]


def test_rerun_reports_changed_input(work, tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_bytes((work / "gen" / "dataset.csv").read_bytes())
    assert run(["eval", "--config", work / "small.cfg", "--checkpoint", work / "train/checkpoint",
                "--dataset", data, "--out", tmp_path / "a"]) == 0
    data.write_text(data.read_text() + "\n")
    assert run(["rerun", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b"]) == 1
    assert "changed" in error_record(capsys)["message"]


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert "epswae" in capsys.readouterr().out
