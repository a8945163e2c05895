import json

import pytest

from lobpredict.cli import build_parser, main
from lobpredict.harness.data import discover

SMALL = ["-T", "10", "-L", "2", "-W", "4", "-D", "3"]


@pytest.fixture(scope="module")
def cli_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--root", str(root), "--tickers", "AAA", "--weeks", "2", "--rate", "0.02",
                 "--feedback", "0.5", "--seed", "3"]) == 0
    return root


def test_parser_lists_subcommands():
    text = build_parser().format_help()
    for cmd in ("ingest", "features", "synth", "train", "evaluate", "mcs", "report"):
        assert cmd in text


def test_synth_writes_sessions(cli_root):
    assert len(discover(cli_root, "AAA")) == 10


def test_ingest_reconciles(cli_root, capsys):
    s = discover(cli_root, "AAA")[0]
    assert main(["ingest", "--message", str(s.message), "--orderbook", str(s.orderbook), "--reconcile"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["reconciled"] and out["clean_events"] < out["raw_events"]


def test_features_train_evaluate(cli_root, tmp_path, capsys):
    feats = tmp_path / "feats"
    assert main(["features", "--root", str(cli_root), "--ticker", "AAA", "--rep", "volume", *SMALL,
                 "--stride", "5", "--out", str(feats)]) == 0
    sets = sorted(feats.glob("AAA_*_volume.lobt"))
    assert len(sets) == 10
    ckpt = tmp_path / "m.ckpt"
    assert main(["train", "--train", *map(str, sets[:8]), "--val", str(sets[8]), "--family", "deepVOL", *SMALL,
                 "--channels", "2", "--hidden", "4", "--epochs", "2", "--batch-size", "16", "--eps", "1e-7",
                 "--out", str(ckpt), "--history", str(tmp_path / "h.csv")]) == 0
    assert ckpt.exists() and (tmp_path / "h.csv").exists()
    capsys.readouterr()
    pred = tmp_path / "p.csv"
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(sets[9]), "--predictions", str(pred)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["model"] == "deepVOL(L2)" and out["cce"] > 0
    assert pred.read_text().splitlines()[0] == "label,p_down,p_flat,p_up"


def test_mcs_subcommand(tmp_path, capsys):
    panel = tmp_path / "panel.csv"
    rows = ["model,window,loss,n"]
    for w in range(1, 13):
        rows += [f"good,{w},{0.9 + 0.01 * (w % 3)},100", f"bad,{w},{1.4 + 0.02 * (w % 4)},100"]
    panel.write_text("\n".join(rows) + "\n")
    assert main(["mcs", "--panel", str(panel), "-B", "500", "--out", str(tmp_path / "r.json")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["pvalues"]["good"] == 1.0 and out["sets"]["0.05"] == ["good"]
    assert json.loads((tmp_path / "r.json").read_text())["order"] == ["bad", "good"]


def test_report_subcommand(tmp_path, capsys):
    root = tmp_path / "data"
    main(["synth", "--root", str(root), "--tickers", "AAA", "--weeks", "11", "--rate", "0.013", "--seed", "1"])
    cfg = {
        "tickers": ["AAA"], "horizons": [10],
        "models": [["benchmark", None, "single"], ["deepOF", "L1", "single"]],
        "T": 10, "L": 2, "W": 4, "channels": 2, "hidden": 4, "B": 200, "block": 1,
        "train": {"epochs": 1, "batch_size": 32},
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    out = tmp_path / "rep"
    assert main(["report", "--config", str(tmp_path / "cfg.json"), "--root", str(root), "--out", str(out)]) == 0
    header, row = (out / "benchmark_pvalues.csv").read_text().splitlines()
    assert header == "ticker,10" and row.startswith("AAA,")


def test_data_root_from_environment(cli_root, monkeypatch, tmp_path):
    monkeypatch.setenv("LOBPREDICT_DATA", str(cli_root))
    assert main(["features", "--ticker", "AAA", "--rep", "volume", *SMALL, "--stride", "50",
                 "--dates", discover(cli_root, "AAA")[0].date, "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("*_volume.lobt"))) == 1
