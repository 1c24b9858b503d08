import json
from pathlib import Path

import numpy as np
import pytest

from crysgen.cli import RunConfig, load_config, main, save_config
from crysgen.data import ToyDatasetSpec, generate_toy_dataset, save_dataset

TOML_CONFIG = """
seed = 3
dataset_path = "{dataset}"
checkpoint_path = "{ckpt}"
metrics_csv_path = "{csv}"

[model]
n_tokens = 40
d_emb = 4
d_hidden = 8
n_layers = 1
n_freq = 2
n_time_freq = 2

[train]
task = "csp"
epochs = 2
batch_size = 8
learning_rate = 1e-3
seed = 3

[train.x_spec]
family = "linear"

[train.l_spec]
family = "linear"

[generation]
steps = 5
seed = 3
"""


@pytest.fixture()
def workdir(tmp_path):
    dataset = generate_toy_dataset(ToyDatasetSpec(kind="perovskite_like",
                                                  n_structures=20, seed=1))
    ds_path = tmp_path / "dataset.json"
    save_dataset(ds_path, dataset)
    cfg_path = tmp_path / "run.toml"
    cfg_path.write_text(TOML_CONFIG.format(
        dataset=ds_path, ckpt=tmp_path / "model.ckpt.json",
        csv=tmp_path / "metrics.csv"))
    return tmp_path, cfg_path, ds_path


def test_config_toml_json_equivalent(workdir, tmp_path):
    _, cfg_path, _ = workdir
    config = load_config(str(cfg_path))
    json_path = tmp_path / "run.json"
    save_config(json_path, config)
    roundtrip = load_config(str(json_path))
    assert roundtrip.to_dict() == config.to_dict()


def test_config_overrides_win(workdir):
    _, cfg_path, _ = workdir
    config = load_config(str(cfg_path), ["train.epochs=9", "model.d_hidden=16"])
    assert config.train.epochs == 9
    assert config.model.d_hidden == 16


def test_config_rejects_unknown_field(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"bogus_section": 1}))
    assert main(["train", "--config", str(path)]) == 2


def test_sde_without_gamma_rejected(workdir, capsys):
    _, cfg_path, _ = workdir
    code = main(["train", "--config", str(cfg_path),
                 "--set", 'generation.coords={"scheme": "sde", "eps_c": 1.0}'])
    assert code == 2
    assert "gamma" in capsys.readouterr().err


def test_missing_dataset_field_named(workdir, capsys):
    _, cfg_path, _ = workdir
    code = main(["train", "--config", str(cfg_path), "--set", "dataset_path=null"])
    assert code == 2
    assert "dataset_path" in capsys.readouterr().err


def test_train_writes_artifacts_and_is_deterministic(workdir):
    tmp_path, cfg_path, _ = workdir
    assert main(["train", "--config", str(cfg_path)]) == 0
    ckpt = tmp_path / "model.ckpt.json"
    first = ckpt.read_bytes()
    assert (tmp_path / "metrics.csv").exists()
    assert main(["train", "--config", str(cfg_path)]) == 0
    assert ckpt.read_bytes() == first
    extra = json.loads(ckpt.read_text())["extra"]
    assert extra["seed"] == 3


def test_generate_csp_echoes_compositions(workdir):
    tmp_path, cfg_path, _ = workdir
    assert main(["train", "--config", str(cfg_path)]) == 0
    comps = [[11, 13, 8, 8, 8], [19, 21, 8, 8, 8]]
    comp_path = tmp_path / "comps.json"
    comp_path.write_text(json.dumps(comps))
    out = tmp_path / "generated.json"
    code = main(["generate", "--checkpoint", str(tmp_path / "model.ckpt.json"),
                 "--config", str(cfg_path), "--task", "csp",
                 "--compositions", str(comp_path), "--out", str(out)])
    assert code == 0
    records = json.loads(out.read_text())
    assert [r["species"] for r in records] == comps
    meta = json.loads(Path(str(out) + ".meta.json").read_text())
    assert meta["seed"] == 3


def test_generate_zero_count_writes_empty_array(workdir):
    tmp_path, cfg_path, _ = workdir
    assert main(["train", "--config", str(cfg_path)]) == 0
    comp_path = tmp_path / "comps.json"
    comp_path.write_text(json.dumps([[11, 13, 8, 8, 8]]))
    out = tmp_path / "empty.json"
    code = main(["generate", "--checkpoint", str(tmp_path / "model.ckpt.json"),
                 "--config", str(cfg_path), "--task", "csp", "--count", "0",
                 "--compositions", str(comp_path), "--out", str(out)])
    assert code == 0
    assert json.loads(out.read_text()) == []


def test_generate_deterministic_given_seed(workdir):
    tmp_path, cfg_path, _ = workdir
    assert main(["train", "--config", str(cfg_path)]) == 0
    comp_path = tmp_path / "comps.json"
    comp_path.write_text(json.dumps([[11, 13, 8, 8, 8]] * 3))
    outs = []
    for name in ("g1.json", "g2.json"):
        out = tmp_path / name
        assert main(["generate", "--checkpoint", str(tmp_path / "model.ckpt.json"),
                     "--config", str(cfg_path), "--task", "csp",
                     "--compositions", str(comp_path), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_generate_incompatible_checkpoint(workdir):
    tmp_path, cfg_path, _ = workdir
    assert main(["train", "--config", str(cfg_path)]) == 0
    comp_path = tmp_path / "comps.json"
    comp_path.write_text(json.dumps([[11, 13, 8, 8, 8]]))
    code = main(["generate", "--checkpoint", str(tmp_path / "model.ckpt.json"),
                 "--config", str(cfg_path), "--set", "model.d_hidden=16",
                 "--task", "csp", "--compositions", str(comp_path),
                 "--out", str(tmp_path / "x.json")])
    assert code == 3


def test_evaluate_ref_vs_ref(workdir, capsys):
    tmp_path, _, ds_path = workdir
    dataset = generate_toy_dataset(ToyDatasetSpec(kind="perovskite_like",
                                                  n_structures=10, seed=2))
    from crysgen.data import save_structures

    ref_path = tmp_path / "ref.json"
    save_structures(ref_path, dataset["structures"])
    out_dir = tmp_path / "eval"
    code = main(["evaluate", "--generated", str(ref_path), "--reference",
                 str(ref_path), "--out-dir", str(out_dir)])
    assert code == 0
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["match_rate"] == 1.0
    assert summary["mean_rmse"] == 0.0
    for key in ("w1_rho", "w1_n_ary", "w1_mean_cn"):
        assert summary[key] >= 0.0
    assert (out_dir / "hist_density_generated.csv").exists()
    assert (out_dir / "evaluation.csv").exists()


def test_evaluate_parse_failure_exit_4(workdir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[{\"species\": [1]")
    code = main(["evaluate", "--generated", str(bad), "--reference", str(bad),
                 "--out-dir", str(tmp_path / "out")])
    assert code == 4


def test_stats_command(workdir, capsys):
    _, _, ds_path = workdir
    assert main(["stats", "--dataset", str(ds_path)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["atom_count_hist"] == {"5": 20}
    assert payload["split_sizes"] == {"train": 12, "val": 4, "test": 4}
