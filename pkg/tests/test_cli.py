import json
import os

import pytest

from equicode.cli import (PRESETS, apply_overrides, load_config_dict, main)
from equicode.errors import ConfigurationError

TINY = {
    "environment": {"name": "double_bump", "length": 16, "bump_width": 4},
    "encoder": {"hidden": [8], "activation": "elu"},
    "objective": {"kind": "euclidean"},
    "latent_dim": 3,
    "barrier": {"kind": "log", "coefficient": 1.0, "reduction": "mean"},
    "steps": 5,
    "batch_size": 6,
    "num_transforms": 2,
    "checkpoint_interval": 5,
    "seed": 0,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def _run_train(tiny_config, tmp_path, extra=()):
    out = str(tmp_path / "run")
    code = main(["train", "--config", tiny_config, "--out", out, *extra])
    return code, out


# -- config loading ------------------------------------------------------


def test_presets_all_load_and_validate():
    from equicode.training import TrainConfig
    for name in PRESETS:
        TrainConfig.from_dict(load_config_dict(name))


def test_unknown_config_name_errors():
    with pytest.raises(ConfigurationError):
        load_config_dict("no_such_preset")


def test_apply_overrides_dotted_paths_and_json_values():
    cfg = {"a": {"b": 1}, "steps": 10}
    out = apply_overrides(cfg, ["a.b=2", "steps=99", "name=hello",
                                "env.kind=\"pendulum\""])
    assert out["a"]["b"] == 2
    assert out["steps"] == 99
    assert out["name"] == "hello"
    assert out["env"]["kind"] == "pendulum"
    with pytest.raises(ConfigurationError):
        apply_overrides({}, ["novalue"])


# -- subcommands ---------------------------------------------------------


def test_train_writes_run_record_and_exits_zero(tiny_config, tmp_path):
    code, out = _run_train(tiny_config, tmp_path)
    assert code == 0
    assert os.path.exists(os.path.join(out, "run.ndjson"))
    assert os.path.exists(os.path.join(out, "config.json"))
    assert os.path.exists(os.path.join(out, "final.ckpt"))


def test_train_set_override_changes_hash(tiny_config, tmp_path, capsys):
    main(["train", "--config", tiny_config, "--json",
          "--out", str(tmp_path / "a")])
    first = capsys.readouterr().out
    main(["train", "--config", tiny_config, "--json", "--set", "seed=7",
          "--out", str(tmp_path / "b")])
    second = capsys.readouterr().out
    h1 = json.loads(first.splitlines()[0])["config_hash"]
    h2 = json.loads(second.splitlines()[0])["config_hash"]
    assert h1 != h2


def test_train_json_output_is_parseable(tiny_config, tmp_path, capsys):
    code = main(["train", "--config", tiny_config, "--json",
                 "--out", str(tmp_path / "run")])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    payloads = [json.loads(line) for line in lines]
    assert payloads[-1]["steps"] == 5


def test_train_invalid_config_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY, "bogus_key": 1}))
    assert main(["train", "--config", str(bad)]) == 1


def test_train_numerical_abort_exit_2(tiny_config, tmp_path):
    code = main(["train", "--config", tiny_config,
                 "--set", "learning_rate=1e150", "--set", "steps=30",
                 "--out", str(tmp_path / "run")])
    assert code == 2


def test_eval_and_export_roundtrip(tiny_config, tmp_path, capsys):
    _, out = _run_train(tiny_config, tmp_path)
    ckpt = os.path.join(out, "final.ckpt")

    assert main(["eval", "--config", tiny_config, "--checkpoint", ckpt,
                 "--json", "--out", str(tmp_path / "eval")]) == 0
    payload = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert "distance" in payload
    assert os.path.exists(tmp_path / "eval" / "preservation.json")

    csv_path = str(tmp_path / "emb.csv")
    assert main(["export", "--config", tiny_config, "--checkpoint", ckpt,
                 "--count", "10", "--out", csv_path]) == 0
    with open(csv_path) as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 11
    assert lines[0].startswith("z0,z1,z2,")


def test_export_deterministic_across_invocations(tiny_config, tmp_path):
    _, out = _run_train(tiny_config, tmp_path)
    ckpt = os.path.join(out, "final.ckpt")
    p1, p2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    main(["export", "--config", tiny_config, "--checkpoint", ckpt,
          "--count", "8", "--out", p1])
    main(["export", "--config", tiny_config, "--checkpoint", ckpt,
          "--count", "8", "--out", p2])
    assert open(p1).read() == open(p2).read()


def test_gradcheck_subcommand_passes(capsys):
    code = main(["gradcheck", "--losses", "hinge,euclidean",
                 "--instances", "3", "--json"])
    assert code == 0
    for line in capsys.readouterr().out.splitlines():
        payload = json.loads(line)
        assert payload["pass"] is True
        assert payload["max_rel_error"] < 1e-4


def test_verify_action_ok_and_faulted(capsys):
    assert main(["verify-action", "--order", "6", "--json"]) == 0
    payload = json.loads(capsys.readouterr().out.strip())
    assert payload["ok"] is True

    assert main(["verify-action", "--order", "6", "--fault", "--json"]) == 1
    payload = json.loads(capsys.readouterr().out.strip())
    assert payload["ok"] is False


def test_rank_subcommand_on_tiny_pendulum(tmp_path, capsys):
    cfg = {
        "environment": {"name": "pendulum", "frame_size": 8},
        "encoder": {"hidden": [8], "activation": "elu"},
        "objective": {"kind": "euclidean"},
        "latent_dim": 3,
        "barrier": {"kind": "log", "coefficient": 1.0, "reduction": "mean"},
        "steps": 2,
        "batch_size": 4,
        "num_transforms": 1,
        "checkpoint_interval": 2,
        "seed": 0,
    }
    path = tmp_path / "pend.json"
    path.write_text(json.dumps(cfg))
    out = str(tmp_path / "run")
    assert main(["train", "--config", str(path), "--out", out]) == 0
    ckpt = os.path.join(out, "final.ckpt")
    code = main(["rank", "--config", str(path), "--checkpoint", ckpt,
                 "--episodes", "2", "--steps-per-episode", "10", "--json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert 0.0 <= payload["hits_at_1"] <= 1.0
    assert 0.0 <= payload["mrr"] <= 1.0
    assert payload["tie_policy"] == "worst-rank"
