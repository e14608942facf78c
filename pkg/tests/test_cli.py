import json

import numpy as np
import pytest

from gtr.cli import improvement, main
from gtr.synth import SynthParams, generate, write_csv


SMALL = ["--override", "T=16", "--override", "S=8", "--override", "D=8", "--override", "L=24", "--override", "P=4",
         "--override", "epochs=2", "--override", "batch_size=64"]


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "toy.csv"
    write_csv(generate("global-cycle", SynthParams(length=600, channels=2, cycle=24, period=6, seed=1)), path)
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_train_writes_artifacts(data_csv, tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run(["train", "--out", out, "--override", f"data={data_csv}", "--override", "seed=2026", *SMALL], capsys)
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 2026
    assert len(manifest["data_sha256"]) == 64
    records = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
    assert all(set(r) == {"dataset", "T", "S", "seed", "epoch", "split", "mse", "mae"} for r in records)
    assert [r["split"] for r in records] == ["train", "val", "train", "val", "test"]
    assert (out / "model_seed2026.gtr").is_file()
    assert json.loads(stdout)["test_mse"]["mean"] == records[-1]["mse"]


def test_train_is_reproducible(data_csv, tmp_path, capsys):
    args = ["--override", f"data={data_csv}", *SMALL, "--seeds", "3,4"]
    run(["train", "--out", tmp_path / "a", *args], capsys)
    run(["train", "--out", tmp_path / "b", *args], capsys)
    for name in ("metrics.jsonl", "summary.json", "manifest.json", "model_seed3.gtr", "model_seed4.gtr"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_eval_reproduces_train_metrics(data_csv, tmp_path, capsys):
    out = tmp_path / "run"
    run(["train", "--out", out, "--override", f"data={data_csv}", *SMALL], capsys)
    test_rec = json.loads((out / "metrics.jsonl").read_text().splitlines()[-1])
    code, stdout, _ = run(["eval", "--checkpoint", out / "model_seed2025.gtr", "--manifest", out / "manifest.json"], capsys)
    assert code == 0
    rec = json.loads(stdout)
    assert (rec["mse"], rec["mae"]) == (test_rec["mse"], test_rec["mae"])


def test_config_file_and_override_precedence(data_csv, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# toy\ndata = {data_csv}\nT = 16\nS = 8\nD = 8\nL = 24\nP = 4\nepochs = 1\nlr = 0.003\n")
    out = tmp_path / "run"
    code, _, _ = run(["train", "--config", cfg, "--out", out, "--override", "lr=0.0005"], capsys)
    assert code == 0
    assert json.loads((out / "manifest.json").read_text())["config"]["lr"] == 0.0005


def test_missing_csv_exit_code(tmp_path, capsys):
    code, _, err = run(["train", "--out", tmp_path, "--override", "data=/no/such.csv"], capsys)
    assert code == 2
    assert "/no/such.csv" in err


def test_usage_errors_exit_one(tmp_path, capsys):
    code, _, _ = run(["train", "--out", tmp_path, "--override", "bogus=1"], capsys)
    assert code == 1
    code, _, _ = run(["train", "--out", tmp_path, "--override", "T=abc"], capsys)
    assert code == 1
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1


def test_numeric_abort_exit_three(data_csv, tmp_path, capsys):
    with np.errstate(all="ignore"):
        code, _, err = run(["train", "--out", tmp_path, "--override", f"data={data_csv}", *SMALL, "--override", "lr=1e300"], capsys)
    assert code == 3
    assert "epoch 0" in err


def test_ablate_table(data_csv, tmp_path, capsys):
    out = tmp_path / "abl"
    code, stdout, _ = run(
        ["ablate", "--out", out, "--override", f"data={data_csv}", *SMALL,
         "--cell", "MLP:use_gtr=false", "--cell", "MLP+GTR:use_gtr=true", "--cell", "pw:variant=pointwise"],
        capsys,
    )
    assert code == 0
    table = json.loads((out / "ablation.json").read_text())
    assert table["baseline"] == "MLP" and not table["partial"]
    base, gtr = table["cells"]["MLP"], table["cells"]["MLP+GTR"]
    assert gtr["improve_mse"] == pytest.approx((base["mse"]["mean"] - gtr["mse"]["mean"]) / gtr["mse"]["mean"])
    assert "MLP+GTR" in stdout


def test_ablate_partial_and_errors(data_csv, tmp_path, capsys):
    out = tmp_path / "abl"
    code, stdout, _ = run(
        ["ablate", "--out", out, "--override", f"data={data_csv}", *SMALL, "--cell", "ok:use_gtr=false", "--cell", "bad:dropout_rate=2"],
        capsys,
    )
    assert code == 2
    table = json.loads((out / "ablation.json").read_text())
    assert table["partial"] and "error" in table["cells"]["bad"]
    assert "FAILED" in stdout
    code, _, err = run(["ablate", "--out", out, "--override", f"data={data_csv}"], capsys)
    assert code == 1 and "empty" in err
    code, _, err = run(["ablate", "--out", out, "--override", f"data={data_csv}", "--cell", "a:T=8", "--cell", "a:T=9"], capsys)
    assert code == 1 and "duplicate" in err


def test_improvement_convention():
    assert improvement(0.165, 0.134) == pytest.approx(0.231, abs=5e-4)


def test_synth_and_estimate_cycle(tmp_path, capsys):
    path = tmp_path / "sine.csv"
    code, _, _ = run(["synth", "--kind", "sine", "--path", path, "--length", "2000", "--channels", "1"], capsys)
    assert code == 0
    code, stdout, _ = run(["estimate-cycle", "--data", path, "--max-lag", "96", "--out", tmp_path], capsys)
    assert code == 0 and stdout.split() == ["ch0", "24"]
    assert (tmp_path / "acf_ch0.csv").read_text().startswith("lag,acf\n0,1.0\n")
    gc = tmp_path / "gc.csv"
    run(["synth", "--path", gc], capsys)
    code, stdout, _ = run(["estimate-cycle", "--data", gc, "--column", "ch0", "--max-lag", "200", "--min-lag", "30", "--out", tmp_path], capsys)
    assert stdout.split() == ["ch0", "168"]
    r = np.loadtxt(tmp_path / "acf_ch0.csv", delimiter=",", skiprows=1)[:, 1]
    for lag in (24, 168):
        assert r[lag] > r[lag - 1] and r[lag] > r[lag + 1]


def test_synth_noiseless_is_periodic(tmp_path, capsys):
    path = tmp_path / "clean.csv"
    run(["synth", "--path", path, "--channels", "1", "--noise", "0", "--length", "1000", "--cycle", "12", "--period", "8"], capsys)
    v = np.loadtxt(path, delimiter=",", skiprows=1)[:, 1]
    np.testing.assert_allclose(v[24:], v[:-24], atol=1e-12)  # lcm(12, 8)
    assert not np.allclose(v[12:], v[:-12]) and not np.allclose(v[8:], v[:-8])


def test_synth_byte_identical(tmp_path, capsys):
    run(["synth", "--path", tmp_path / "a.csv"], capsys)
    run(["synth", "--path", tmp_path / "b.csv"], capsys)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_correlate_identical_channels(tmp_path, capsys):
    x = np.random.default_rng(0).normal(size=50)
    path = tmp_path / "two.csv"
    write_csv(np.stack([x, x], axis=1), path)
    code, stdout, _ = run(["correlate", "--data", path], capsys)
    assert code == 0
    rows = [line.split(",") for line in stdout.strip().splitlines()]
    assert rows[0] == ["", "ch0", "ch1"]
    assert np.allclose(np.array(rows[1:])[:, 1:].astype(float), 1.0, atol=1e-15)
    code, _, err = run(["correlate", "--data", path, "--mode", "segments"], capsys)
    assert code == 1
    code, stdout, _ = run(["correlate", "--data", path, "--mode", "segments", "--segment-len", "10", "--column", "ch0"], capsys)
    assert code == 0 and stdout.splitlines()[0].count("seg") == 5


def test_verify_theorem_grid(tmp_path, capsys):
    code, stdout, _ = run(["verify-theorem", "--samples", "20000", "--out", tmp_path], capsys)
    assert code == 0
    recs = [json.loads(l) for l in stdout.splitlines()]
    assert len(recs) == 36
    assert all(r["inequality_holds"] for r in recs if r["hypothesis"])
    assert (tmp_path / "theorem.jsonl").read_text() == stdout
