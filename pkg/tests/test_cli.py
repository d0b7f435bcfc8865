import filecmp

import pytest

from microres.cli import main

AS_OF = "2012-12-31"
TRIANGLE = "origin,0,1,2\n2010,40,10,5\n2011,50,12,\n2012,45,,\n"


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--seed", "7", "--n-claims", "1500", "--as-of", AS_OF, "--out-dir", str(root / "data")]) == 0
    tx = str(root / "data" / "transactions.csv")
    assert main(["ingest", "--transactions", tx, "--as-of", AS_OF, "--out-dir", str(root / "ingest")]) == 0
    assert main(["fit", "--transactions", tx, "--as-of", AS_OF, "--out-dir", str(root / "run")]) == 0
    return root


def test_end_to_end(fitted):
    tx = str(fitted / "data" / "transactions.csv")
    run = fitted / "run"
    assert main(["simulate", "--transactions", tx, "--as-of", AS_OF, "--seed", "1", "--n-sims", "20",
                 "--out-dir", str(run)]) == 0
    assert main(["evaluate", "--claim-draws", str(run / "claim_draws.csv"), "--truth",
                 str(fitted / "data" / "truth.csv"), "--out-dir", str(run)]) == 0
    assert main(["report", "--out-dir", str(run)]) == 0
    report = (run / "report.txt").read_text()
    for section in ("transition percentages", "split points", "bin means", "bin probabilities", "ibnr counts",
                    "best estimate", "metrics"):
        assert f"# {section}\n" in report
    assert main(["binning", "--out-dir", str(run)]) == 0
    assert main(["pdp", "--transactions", tx, "--variable", "inProcTime", "--out-dir", str(run)]) == 0
    assert (run / "pdp_inProcTime.csv").read_text().startswith("model,level,N,P,TN,TP\n")


def test_simulate_identical_across_workers(fitted):
    tx = str(fitted / "data" / "transactions.csv")
    models = str(fitted / "run" / "models")
    outs = []
    for workers in ("1", "2"):
        out = fitted / f"sim{workers}"
        assert main(["simulate", "--transactions", tx, "--models", models, "--as-of", AS_OF, "--seed", "3",
                     "--n-sims", "10", "--workers", workers, "--out-dir", str(out)]) == 0
        outs.append(out)
    names = ["reserve_summary.csv", "claim_quantiles.csv", "histogram.csv", "draws.csv", "claim_draws.csv"]
    match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
    assert match == names and not mismatch and not errors


def test_simulate_without_models(tmp_path, capsys):
    code = main(["simulate", "--transactions", "x.csv", "--as-of", AS_OF, "--seed", "1", "--out-dir", str(tmp_path)])
    assert code == 3
    assert "models not found" in capsys.readouterr().err


def test_chainladder_deterministic_and_no_overwrite(tmp_path, capsys):
    tri = tmp_path / "t.csv"
    tri.write_text(TRIANGLE)
    args = ["chainladder", "--triangle", str(tri), "--bootstrap", "1000", "--seed", "1"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("cl_projection.csv", "cl_bootstrap.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 7
    assert "OutputExists" in capsys.readouterr().err
    assert main(args + ["--out-dir", str(tmp_path / "a"), "--force"]) == 0


def test_ibnr_and_config_errors(tmp_path, capsys):
    tri = tmp_path / "t.csv"
    tri.write_text(TRIANGLE)
    assert main(["ibnr", "--triangle", str(tri), "--seed", "2", "--draws", "500", "--out-dir", str(tmp_path)]) == 0
    rows = (tmp_path / "ibnr_counts.csv").read_text().splitlines()
    assert rows[0].startswith("origin,reported,p,expected") and rows[-1].startswith("total,")
    bad = tmp_path / "bad.yaml"
    bad.write_text("maxMod: 9\nnpmax: 5\n")
    assert main(["ibnr", "--triangle", str(tri), "--config", str(bad), "--out-dir", str(tmp_path / "c")]) == 5
    assert "ConfigError" in capsys.readouterr().err
