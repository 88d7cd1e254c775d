import csv
import json

import numpy as np
import pytest

from dpmld import audit as au
from dpmld import cli
from dpmld.privacy import allocate_budget


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert cli.main(["gen-data", "--out", str(out), "--n", "60", "--timesteps", "16", "--seed", "1"]) == 0
    return out


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_gen_data_default_count():
    parser, _ = cli.build_parser()
    assert parser.parse_args(["gen-data"]).n == 3000


def test_gen_data_default_writes_3000(tmp_path, capsys):
    assert cli.main(["gen-data", "--out", str(tmp_path / "d"), "--timesteps", "8"]) == 0
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["n_samples"] == 3000
    assert "3000 samples" in capsys.readouterr().out


def test_gen_data_n_and_determinism(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["gen-data", "--out", str(tmp_path / name), "--n", "10", "--timesteps", "8"]) == 0
    a = (tmp_path / "a" / "data.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "data.jsonl").read_bytes()
    assert len(a.splitlines()) == 10


def test_gen_data_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["gen-data", "--out", str(blocker / "sub"), "--n", "4"]) == cli.EXIT_DATA


def test_allocate_table(capsys):
    assert cli.main(["allocate", "--epsilon", "1.0", "--w", "0.5,0.0001"]) == 0
    table = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    half, tiny = table
    assert float(half["eps_prime"]) == pytest.approx(1.48988, abs=1e-5)
    assert float(half["b"]) == pytest.approx(0.671195, abs=1e-6)
    assert float(tiny["eps_prime"]) == pytest.approx(1.0, abs=1e-4)
    for r in table:
        assert r["w+(1-w)exp(eps_prime)"] == r["exp(eps)"]
    assert len(half["eps_prime"].replace(".", "").lstrip("0")) <= 9


@pytest.mark.parametrize("w", ["1.0", "-0.1", "abc"])
def test_allocate_invalid(w):
    try:
        code = cli.main(["allocate", "--w", w])
    except SystemExit as exc:  # argparse rejects malformed numbers itself
        code = exc.code
    assert code == cli.EXIT_CONFIG


def test_audit_defaults(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert cli.main(["audit", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["measured_epsilon"] == pytest.approx(1.0, abs=1e-9)
    assert doc["worst_pair"] == [1.0, 0.0]
    assert doc["verdict"] == "pass"
    assert len(doc["entries"]) == 441 * 9


def test_audit_small_epsilon(tmp_path):
    out = tmp_path / "r.json"
    assert cli.main(["audit", "--epsilon", "0.1", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["measured_epsilon"] == pytest.approx(0.1, abs=1e-9)


def test_audit_monte_carlo_column(tmp_path):
    out = tmp_path / "r.json"
    assert cli.main(["audit", "--w", "0.5", "--mc-draws", "1e6", "--out", str(out), "--seed", "4"]) == 0
    (row,) = json.loads(out.read_text())["monte_carlo"]
    assert abs(row["mc_estimate"] - row["analytic_binned"]) <= row["mc_width"]


def test_audit_violation_exit(tmp_path, monkeypatch):
    real = au.audit_mechanism

    def inflated(*args, **kw):
        report = real(*args, **kw)
        report.claimed = report.claimed / 2
        report.__post_init__()
        return report

    monkeypatch.setattr(au, "audit_mechanism", inflated)
    assert cli.main(["audit", "--w", "0.5", "--pairs", "grid:0.5", "--out", str(tmp_path / "r.json")]) == cli.EXIT_AUDIT


def test_audit_bad_grid(tmp_path):
    assert cli.main(["audit", "--pairs", "grid:0.3", "--out", str(tmp_path / "r.json")]) == cli.EXIT_CONFIG
    assert cli.main(["audit", "--pairs", "nofile", "--out", str(tmp_path / "r.json")]) == cli.EXIT_CONFIG


def test_audit_pairs_file_and_extended(tmp_path):
    pairs = tmp_path / "pairs.txt"
    pairs.write_text("# f1,f2\n1,0\n0.5,0.25\n")
    assert cli.main(["audit", "--pairs", str(pairs), "--w", "0.5", "--out", str(tmp_path / "a.json")]) == 0
    pairs.write_text("3,0\n")
    assert cli.main(["audit", "--pairs", str(pairs), "--w", "0.5", "--out", str(tmp_path / "b.json")]) == cli.EXIT_CONFIG
    assert cli.main(["audit", "--pairs", str(pairs), "--w", "0.5", "--extended",
                     "--out", str(tmp_path / "c.json")]) == 0
    assert json.loads((tmp_path / "c.json").read_text())["measured_epsilon"] > 1.0


def test_train_zero_epochs(tmp_path, data_dir):
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(data_dir), "--epochs", "0", "--out", str(run)]) == 0
    assert (run / "metrics.jsonl").read_text() == ""
    for name in ("config.txt", "rates.csv", "params.npz", "audit.json", "allocation_eeg.csv"):
        assert (run / name).exists()


def test_train_metrics_schema(tmp_path, data_dir):
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(data_dir), "--epochs", "2", "--out", str(run)]) == 0
    records = [json.loads(line) for line in (run / "metrics.jsonl").read_text().splitlines()]
    assert len(records) == 2
    for r in records:
        assert r["schema_version"] == cli.SCHEMA_VERSION
        assert {"epoch", "train_acc", "test_acc", "train_loss", "test_loss", "macro_f1"} <= set(r)
    assert json.loads((run / "audit.json").read_text())["verdict"] == "pass"


def test_train_non_private(tmp_path, data_dir):
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(data_dir), "--epochs", "1", "--non-private", "--out", str(run)]) == 0
    assert all(float(r["w"]) == 0.0 and float(r["b"]) == 0.0 for r in rows(run / "rates.csv"))
    assert "not applicable" in json.loads((run / "audit.json").read_text())["verdict"]


def test_train_errors(tmp_path, data_dir):
    assert cli.main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == cli.EXIT_DATA
    assert cli.main(["train", "--out", str(tmp_path / "r")]) == cli.EXIT_DATA
    assert cli.main(["train", "--data", str(data_dir), "--epsilon", "0", "--out", str(tmp_path / "r")]) == cli.EXIT_CONFIG


def test_config_file_and_override(tmp_path, data_dir):
    conf = tmp_path / "c.txt"
    conf.write_text(f"# run settings\ndata = {data_dir}\nepochs = 1\nepsilon = 0.5\nseed = 3\n")
    run = tmp_path / "run"
    assert cli.main(["train", "--config", str(conf), "--epsilon", "2.0", "--out", str(run)]) == 0
    snap = cli.read_config(run / "config.txt")
    assert snap["epsilon"] == "2.0" and snap["epochs"] == "1" and snap["seed"] == "3"
    conf.write_text("bogus = 1\n")
    assert cli.main(["train", "--config", str(conf)]) == cli.EXIT_CONFIG
    conf.write_text("not a pair\n")
    assert cli.main(["train", "--config", str(conf)]) == cli.EXIT_CONFIG


def test_seed_env_fallback(tmp_path, data_dir, monkeypatch):
    monkeypatch.setenv("DPMLD_SEED", "17")
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(data_dir), "--epochs", "0", "--out", str(run)]) == 0
    assert cli.read_config(run / "config.txt")["seed"] == "17"
    monkeypatch.setenv("DPMLD_SEED", "x")
    assert cli.main(["train", "--data", str(data_dir), "--epochs", "0", "--out", str(run)]) == cli.EXIT_CONFIG


def test_snapshot_reproduces_run(tmp_path, data_dir):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["train", "--data", str(data_dir), "--epochs", "2", "--seed", "5", "--out", str(a)]) == 0
    assert cli.main(["train", "--config", str(a / "config.txt"), "--out", str(b)]) == 0
    assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()
    assert (a / "rates.csv").read_bytes() == (b / "rates.csv").read_bytes()


def test_report_untrained(tmp_path, data_dir, capsys):
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(data_dir), "--epochs", "0", "--out", str(run)]) == 0
    out = tmp_path / "rep"
    assert cli.main(["report", "--run", str(run), "--out", str(out)]) == 0
    for block in ("eeg", "om", "cm"):
        table = rows(out / f"allocation_{block}.csv")
        w = np.array([float(r["w"]) for r in table])
        b = np.array([float(r["b"]) for r in table])
        assert len(w) == len(b) == 16
        assert np.allclose(w, 0.5)
        assert np.allclose(b, allocate_budget(w, 1.0).scales, rtol=1e-8)
    assert "mean w 0.500000" in capsys.readouterr().out


def test_report_matches_train_output(tmp_path, data_dir):
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(data_dir), "--epochs", "1", "--out", str(run)]) == 0
    before = (run / "allocation_cm.csv").read_bytes()
    assert cli.main(["report", "--run", str(run)]) == 0
    assert (run / "allocation_cm.csv").read_bytes() == before


def test_report_missing(tmp_path):
    assert cli.main(["report", "--run", str(tmp_path / "nothing")]) == cli.EXIT_DATA


def test_benchmark_table_shape(tmp_path, data_dir):
    out = tmp_path / "bench.csv"
    argv = ["benchmark", "--data", str(data_dir), "--epochs", "1", "--seeds", "2", "--mus", "0.3,0.7",
            "--out", str(out), "--runs-dir", str(tmp_path / "runs")]
    assert cli.main(argv) == 0
    table = rows(out)
    assert [(r["scheme"], r["epsilon"]) for r in table] == [
        ("elementwise", "0.01"), ("elementwise", "0.1"), ("elementwise", "1"),
        ("uniform", "0.01"), ("uniform", "0.1"), ("uniform", "1"),
        ("non-private", ""),
    ]
    assert all(r["seeds"] == "2" for r in table)
    assert all(r["mu"] in ("0.3", "0.7") for r in table if r["scheme"] == "uniform")
    assert len(list((tmp_path / "runs").iterdir())) == 2 * (3 + 6 + 1)


def test_benchmark_concurrent_matches_serial(tmp_path, data_dir):
    base = ["benchmark", "--data", str(data_dir), "--epochs", "1", "--seeds", "2", "--schemes", "elementwise",
            "--epsilons", "1.0"]
    assert cli.main(base + ["--out", str(tmp_path / "s.csv")]) == 0
    assert cli.main(base + ["--jobs", "2", "--out", str(tmp_path / "p.csv")]) == 0
    assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "p.csv").read_bytes()


def test_benchmark_bad_scheme(tmp_path, data_dir):
    assert cli.main(["benchmark", "--data", str(data_dir), "--schemes", "magic"]) == cli.EXIT_CONFIG
