import csv
import json

import pytest

from fedprompt.core.config import load_config
from fedprompt.main import CONFIG_ECHO, PROMPT_FILE, ROUND_LOG, main
from fedprompt.services import data_service, fed_service, metrics_service, model_service
from fedprompt.services.ledger import comm_ratio

SMALL_RUN = """\
clients = 3
rounds = 2
batch = 4
local_steps = 3
seed = 11
vocab = 64
hidden = 8
ffn = 16
m = 4
L_max = 8
n_train = 60
n_test = 20
words_per_text = 5
data_seed = 3
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(SMALL_RUN)
    return path


def test_gen_data_and_partition(tmp_path, capsys):
    data = tmp_path / "train.jsonl"
    manifest = tmp_path / "shards.json"
    assert main(["gen-data", "--out", str(data), "--n", "40", "--words", "4", "--seed", "2"]) == 0
    assert data_service.load_jsonl(data).examples == data_service.gen_synthetic(2, 40, 4).examples

    assert main(["partition", "--data", str(data), "--clients", "4", "--alpha", "0.5", "--out", str(manifest)]) == 0
    partition = data_service.load_partition(manifest, 40)
    assert partition.num_clients == 4
    assert json.loads(manifest.read_text())["alpha"] == 0.5
    assert "4 shards" in capsys.readouterr().out


def test_poison_preview(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    data_service.save_jsonl(data_service.gen_synthetic(0, 10, 3), data)
    assert main(["poison-preview", "--data", str(data), "--target", "0", "--limit", "2"]) == 0
    out = capsys.readouterr().out
    assert "before: 10 examples" in out
    assert "after: 15 examples (5 poisoned copies appended)" in out
    assert "[0] cf " in out


def test_run_writes_log_and_checkpoint(tmp_path, config_file, capsys):
    out_dir = tmp_path / "out"
    assert main(["run", "--config", str(config_file), "--out-dir", str(out_dir)]) == 0
    records = metrics_service.read_round_log(out_dir / ROUND_LOG)
    assert [r.round for r in records] == [0, 1]
    prompt = model_service.load_prompt(out_dir / PROMPT_FILE)
    assert prompt.shape == (4, 8)
    assert load_config(out_dir / CONFIG_ECHO) == load_config(config_file)
    assert "final acc=" in capsys.readouterr().out


def test_run_is_reproducible(tmp_path, config_file):
    for name in ("a", "b"):
        assert main(["run", "--config", str(config_file), "--out-dir", str(tmp_path / name)]) == 0
    for file in (ROUND_LOG, PROMPT_FILE):
        assert (tmp_path / "a" / file).read_bytes() == (tmp_path / "b" / file).read_bytes()


def test_centralized_run_has_no_traffic(tmp_path, config_file):
    out_dir = tmp_path / "central"
    assert main(["run", "--config", str(config_file), "--out-dir", str(out_dir), "--centralized"]) == 0
    records = metrics_service.read_round_log(out_dir / ROUND_LOG)
    assert all(r.upload_bytes == 0 and r.download_bytes == 0 for r in records)
    assert all(r.participants == [0] for r in records)


def test_report_with_config(tmp_path, config_file, capsys):
    out_dir = tmp_path / "out"
    main(["run", "--config", str(config_file), "--out-dir", str(out_dir)])
    capsys.readouterr()
    table = tmp_path / "rounds.csv"
    assert main(["report", "--log", str(out_dir / ROUND_LOG), "--csv", str(table), "--config", str(config_file)]) == 0

    runtime = fed_service.build_runtime(load_config(config_file))
    prompt_params = runtime.initial_prompt.num_params
    total = model_service.param_count(runtime.backbone) + prompt_params
    out = capsys.readouterr().out
    assert f"{comm_ratio(prompt_params, total) * 100:.4f}%" in out
    with table.open() as f:
        assert len(list(csv.DictReader(f))) == 2


@pytest.mark.parametrize(
    "prompt_params,total_params,expected",
    [(16_000, 109_530_000, 0.014), (16_000, 124_714_000, 0.013), (15_000, 222_919_000, 0.007)],
)
def test_report_reproduces_published_ratios(tmp_path, capsys, prompt_params, total_params, expected):
    log = tmp_path / "r.jsonl"
    log.write_text(
        '{"round": 0, "participants": [0], "acc": 0.9, "upload_bytes": 8, '
        '"download_bytes": 8, "prompt_l2": 1.0}\n'
    )
    argv = ["report", "--log", str(log), "--prompt-params", str(prompt_params), "--total-params", str(total_params)]
    assert main(argv) == 0
    line = next(l for l in capsys.readouterr().out.splitlines() if l.startswith("comm ratio"))
    percent = float(line.split()[-1].rstrip("%"))
    assert abs(percent - expected) <= 0.002


def test_report_needs_parameter_counts(tmp_path):
    log = tmp_path / "r.jsonl"
    log.write_text("")
    assert main(["report", "--log", str(log)]) == 6


def test_exit_codes(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.cfg")]) == 3
    bad = tmp_path / "bad.cfg"
    bad.write_text("clients = 3\nwhatever = 1\n")
    assert main(["run", "--config", str(bad)]) == 4

    data = tmp_path / "d.jsonl"
    data_service.save_jsonl(data_service.gen_synthetic(0, 4, 2), data)
    assert main(["partition", "--data", str(data), "--clients", "5", "--out", str(tmp_path / "m.json")]) == 6


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 2


def test_poison_preview_unknown_client(tmp_path):
    data = tmp_path / "d.jsonl"
    manifest = tmp_path / "m.json"
    data_service.save_jsonl(data_service.gen_synthetic(0, 10, 3), data)
    assert main(["partition", "--data", str(data), "--clients", "2", "--out", str(manifest)]) == 0
    argv = ["poison-preview", "--data", str(data), "--manifest", str(manifest), "--client", "5"]
    assert main(argv) == 6


def test_undecodable_dataset_exits_6(tmp_path):
    data = tmp_path / "d.jsonl"
    data.write_bytes(b'{"text": "good", "label": 1}\n\xff\n')
    assert main(["partition", "--data", str(data), "--clients", "1", "--out", str(tmp_path / "m.json")]) == 6


def test_bad_settings_exit_4(monkeypatch, tmp_path):
    monkeypatch.setenv("FEDPROMPT_WORKERS", "0")
    assert main(["gen-data", "--out", str(tmp_path / "d.jsonl")]) == 4
    assert not (tmp_path / "d.jsonl").exists()


@pytest.mark.parametrize("command", ["gen-data", "partition"])
def test_negative_seed_is_a_usage_error(tmp_path, command):
    argv = [command, "--out", str(tmp_path / "x"), "--seed", "-1"]
    if command == "partition":
        argv += ["--data", str(tmp_path / "d.jsonl"), "--clients", "2"]
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
