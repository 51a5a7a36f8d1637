"""End-to-end tests for the command-line surface and run configuration."""

import hashlib
import json
import shutil
from pathlib import Path

import pytest

from cogcap.cli import build_parser, cli_main, render_report
from cogcap.config import ConfigError, RunConfig, config_to_json
from cogcap.evaluation import walk_leaves

SMALL_CONFIG = {
    "seed": 7,
    "generation": {"n_concepts_train": 12, "n_images_per_concept": 2,
                   "n_repetitions": 2, "n_concepts_test": 6,
                   "n_test_repetitions": 4, "n_channels": 8,
                   "n_samples_raw": 100, "latent_dim": 8, "snr": 8.0,
                   "modality_private_frac": 0.0},
    "align": {"embed_dim": 16, "temporal_kernel": 9, "conv_channels": 8,
              "pool_kernel": 4, "pool_stride": 2, "batch_size": 24, "epochs": 3},
    "prior": {"n_blocks": 2, "hidden_mult": 2, "t_steps": 20,
              "batch_size": 24, "epochs": 5},
    "eval": {"n_steps": 10, "guidance_scale": 2.0, "n_bootstrap": 200},
}

SUBCOMMANDS = ["gen-data", "train-align", "train-prior", "eval",
               "attribute", "report", "sweep"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full gen-data -> train-align -> train-prior -> eval run."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "c.json"
    cfg_path.write_text(json.dumps(SMALL_CONFIG))
    data, ckpt, report = root / "d", root / "ckpt", root / "report.json"
    assert cli_main(["gen-data", "--config", str(cfg_path), "--out", str(data)]) == 0
    assert cli_main(["train-align", "--data", str(data), "--out", str(ckpt)]) == 0
    assert cli_main(["train-prior", "--data", str(data), "--ckpt", str(ckpt)]) == 0
    assert cli_main(["eval", "--data", str(data), "--ckpt", str(ckpt),
                     "--out", str(report)]) == 0
    return {"root": root, "config": cfg_path, "data": data, "ckpt": ckpt,
            "report": report}


def tree_digest(directory: Path) -> dict[str, str]:
    return {
        str(p.relative_to(directory)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(directory.rglob("*")) if p.is_file()
    }


# ---------------------------------------------------------------- config

def test_run_config_round_trips_through_json():
    cfg = RunConfig.from_dict(SMALL_CONFIG)
    again = RunConfig.from_dict(json.loads(config_to_json(cfg)))
    assert again == cfg
    assert RunConfig.from_dict(json.loads(config_to_json(RunConfig()))) == RunConfig()


def test_run_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="typo_section"):
        RunConfig.from_dict({"typo_section": {}})
    with pytest.raises(ConfigError, match="align.learning_rate"):
        RunConfig.from_dict({"align": {"learning_rate": 0.1}})


def test_prior_embedding_width_follows_aligner():
    cfg = RunConfig.from_dict({"align": {"embed_dim": 24}})
    assert cfg.prior.embed_dim == 24
    # not an independent knob, so an explicit value is an unknown key
    with pytest.raises(ConfigError, match="prior.embed_dim"):
        RunConfig.from_dict({"prior": {"embed_dim": 8}})


def test_every_config_field_has_a_default():
    cfg = RunConfig.from_dict({})
    assert cfg == RunConfig()


# ---------------------------------------------------------------- exit codes

def test_help_on_every_subcommand_exits_zero(capsys):
    for cmd in SUBCOMMANDS:
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([cmd, "--help"])
        assert exc.value.code == 0
        assert cmd in capsys.readouterr().out


def test_usage_errors_exit_one(capsys):
    assert cli_main(["frobnicate"]) == 1
    assert cli_main(["eval"]) == 1  # required flags missing
    assert cli_main(["gen-data", "--no-such-flag", "x"]) == 1
    capsys.readouterr()


def test_eval_without_checkpoints_exits_two(pipeline, capsys):
    code = cli_main(["eval", "--data", str(pipeline["data"]),
                     "--ckpt", str(pipeline["root"] / "empty"),
                     "--out", str(pipeline["root"] / "r.json")])
    assert code == 2
    assert "missing checkpoint" in capsys.readouterr().err


def test_bad_config_file_exits_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert cli_main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_bad_thread_cap_exits_two(pipeline, monkeypatch, capsys):
    monkeypatch.setenv("COGCAP_THREADS", "zero")
    code = cli_main(["train-align", "--data", str(pipeline["data"]),
                     "--out", str(pipeline["root"] / "ckpt_badthreads")])
    assert code == 2
    assert "COGCAP_THREADS" in capsys.readouterr().err


# ---------------------------------------------------------------- pipeline

def test_gen_data_is_reproducible(pipeline, tmp_path):
    other = tmp_path / "d2"
    assert cli_main(["gen-data", "--config", str(pipeline["config"]),
                     "--out", str(other)]) == 0
    assert tree_digest(other) == tree_digest(pipeline["data"])


def test_train_align_is_reproducible_with_thread_cap(pipeline, tmp_path, monkeypatch):
    monkeypatch.setenv("COGCAP_THREADS", "1")
    other = tmp_path / "ckpt2"
    assert cli_main(["train-align", "--data", str(pipeline["data"]),
                     "--out", str(other)]) == 0
    ours = {k: v for k, v in tree_digest(pipeline["ckpt"]).items()
            if k.startswith("align")}
    assert tree_digest(other) == ours


def test_eval_is_reproducible(pipeline, tmp_path):
    other = tmp_path / "r2.json"
    assert cli_main(["eval", "--data", str(pipeline["data"]),
                     "--ckpt", str(pipeline["ckpt"]), "--out", str(other)]) == 0
    assert other.read_bytes() == pipeline["report"].read_bytes()


def test_eval_accepts_dataset_spelling(pipeline, tmp_path):
    other = tmp_path / "r_alias.json"
    assert cli_main(["eval", "--dataset", str(pipeline["data"]),
                     "--ckpt", str(pipeline["ckpt"]), "--out", str(other)]) == 0
    assert other.read_bytes() == pipeline["report"].read_bytes()


def test_eval_seed_changes_report(pipeline, tmp_path):
    other = tmp_path / "r3.json"
    assert cli_main(["eval", "--data", str(pipeline["data"]),
                     "--ckpt", str(pipeline["ckpt"]), "--out", str(other),
                     "--seed", "99"]) == 0
    assert other.read_bytes() != pipeline["report"].read_bytes()
    assert json.loads(other.read_text())["seeds"]["eval"] == 99


def test_corrupted_checkpoint_is_refused(pipeline, tmp_path, capsys):
    broken = tmp_path / "broken"
    shutil.copytree(pipeline["ckpt"], broken)
    victim = next((broken / "align" / "image").glob("*.cgtn"))
    blob = bytearray(victim.read_bytes())
    blob[-1] ^= 0xFF
    victim.write_bytes(bytes(blob))
    code = cli_main(["eval", "--data", str(pipeline["data"]),
                     "--ckpt", str(broken),
                     "--out", str(tmp_path / "r.json")])
    assert code == 2
    assert "integrity" in capsys.readouterr().err


def test_checkpoint_from_other_dataset_is_refused(pipeline, tmp_path, capsys):
    other_data = tmp_path / "d_other"
    assert cli_main(["gen-data", "--config", str(pipeline["config"]),
                     "--seed", "1234", "--out", str(other_data)]) == 0
    code = cli_main(["eval", "--data", str(other_data),
                     "--ckpt", str(pipeline["ckpt"]),
                     "--out", str(tmp_path / "r.json")])
    assert code == 2
    assert "different dataset" in capsys.readouterr().err


def test_oracle_eval_hits_ceiling(pipeline, tmp_path):
    out = tmp_path / "oracle.json"
    assert cli_main(["eval", "--data", str(pipeline["data"]),
                     "--ckpt", str(pipeline["ckpt"]), "--out", str(out),
                     "--oracle"]) == 0
    report = json.loads(out.read_text())
    assert report["oracle"] is True
    for m in ("image", "text", "depth"):
        assert report["retrieval"][m]["top1"] == 1.0


def test_attribute_writes_normalized_maps(pipeline, tmp_path):
    out = tmp_path / "sal.json"
    assert cli_main(["attribute", "--data", str(pipeline["data"]),
                     "--ckpt", str(pipeline["ckpt"]), "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert set(payload) == {"image", "text", "depth", "average"}
    for sal in payload.values():
        assert abs(sum(sal["channel_saliency"]) - 1.0) < 1e-9
        assert abs(sum(sal["time_saliency"]) - 1.0) < 1e-9


def test_report_command_round_trip(pipeline, tmp_path, capsys):
    out = tmp_path / "report.txt"
    assert cli_main(["report", "--report", str(pipeline["report"]),
                     "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "retrieval accuracy" in stdout
    assert out.read_text().strip() == stdout.strip()


def test_report_renders_every_field_exactly_once(pipeline):
    report = json.loads(pipeline["report"].read_text())
    text, rendered = render_report(report)
    expected = [path for path, _ in walk_leaves(report)]
    assert sorted(rendered) == sorted(expected)
    assert len(rendered) == len(set(rendered))
    assert report["config_hash"] in text


def test_sweep_writes_full_grid(pipeline, tmp_path):
    out = tmp_path / "sweep.json"
    assert cli_main(["sweep", "--data", str(pipeline["data"]), "--out", str(out),
                     "--batch-sizes", "16,24", "--lrs", "0.001",
                     "--epochs", "2"]) == 0
    payload = json.loads(out.read_text())
    assert [(g["batch_size"], g["lr"]) for g in payload["grid"]] == [
        (16, 0.001), (24, 0.001)]
    for cell in payload["grid"]:
        assert 0.0 <= cell["top1"] <= cell["top5"] <= 1.0
