import json
import re

import numpy as np
import pytest

from sqfc import __version__, _parallel
from sqfc.cli import main

LINE = re.compile(r'^level=(DEBUG|INFO|WARNING|ERROR|CRITICAL) module=\w+ message=".*"$')


@pytest.fixture(autouse=True)
def _reset_threads():
    yield
    _parallel.set_default_threads(None)


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["simulate", "--shape", "10x10", "--seed", "1", "--out", "data.csv", "--quiet"]) == 0
    return tmp_path


def _manifest(path):
    return json.loads(open(f"{path}.manifest.json").read())


def test_smoke_pipeline(workdir, capsys):
    assert main(["fit", "--input", "data.csv", "--tau", "0.5", "--bandwidth", "0.3", "--out", "curve.json"]) == 0
    recs = json.loads((workdir / "curve.json").read_text())
    assert len(recs) == 100 and all(r["converged"] for r in recs)
    assert (workdir / "curve.csv").exists()
    man = _manifest(workdir / "curve.json")
    assert man["subcommand"] == "fit" and man["version"] == __version__
    assert man["config"]["fit"]["bandwidth"] == 0.3
    assert set(man["inputs"]) == {"data.csv"} and len(man["inputs"]["data.csv"]) == 64
    assert man["wall_seconds"] >= 0
    err = capsys.readouterr().err.strip().splitlines()
    assert err and all(LINE.match(l) for l in err)


def test_missing_input_is_usage_error(workdir, capsys):
    assert main(["fit", "--tau", "0.5", "--bandwidth", "0.3", "--out", "c.json"]) == 1
    assert "usage:" in capsys.readouterr().err
    assert main(["nonsense"]) == 1
    assert main([]) == 1
    assert main(["detrend", "--input", "data.csv", "--trend-kernel-order", "3", "--out", "x.csv"]) == 1


def test_tiny_bandwidth_is_numerical_failure(workdir, capsys):
    assert main(["fit", "--input", "data.csv", "--bandwidth", "1e-9", "--out", "c.json"]) == 3
    assert "InsufficientSupport" in capsys.readouterr().err


def test_data_errors(workdir):
    assert main(["fit", "--input", "nope.csv", "--bandwidth", "0.3", "--out", "c.json"]) == 2
    text = (workdir / "data.csv").read_text().splitlines()
    (workdir / "dup.csv").write_text("\n".join(text + [text[1]]) + "\n")
    assert main(["fit", "--input", "dup.csv", "--bandwidth", "0.3", "--out", "c.json"]) == 2
    assert main(["fit", "--input", "data.csv", "--y", "missing", "--bandwidth", "0.3", "--out", "c.json"]) == 2


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_curve_subcommand(workdir, capsys):
    main(["fit", "--input", "data.csv", "--bandwidth", "0.3", "--grid", "20", "--out", "c.json", "--quiet"])
    capsys.readouterr()
    assert main(["curve", "--curve", "c.json", "--at", "0.5", "--x-value", "1,2", "--csv", "e.csv"]) == 0
    out = json.loads(capsys.readouterr().out)
    pt = out["points"][0]
    assert pt["prediction"] == pytest.approx(pt["beta"][0] + 2 * pt["beta"][1])
    assert (workdir / "e.csv.manifest.json").exists()
    assert main(["curve", "--curve", "c.json", "--at", "5.0"]) == 1


def test_infer_bandwidth_detrend_mc(workdir):
    main(["fit", "--input", "data.csv", "--bandwidth", "0.4", "--grid", "15", "--out", "c.json", "--quiet"])
    assert main(["infer", "--input", "data.csv", "--curve", "c.json", "--undersmooth", "0.8",
                 "--out", "b.json", "--quiet"]) == 0
    doc = json.loads((workdir / "b.json").read_text())
    assert doc["bandwidth"] == pytest.approx(0.32)
    assert (workdir / "b.csv").exists()
    assert main(["bandwidth", "--input", "data.csv", "--candidates", "0.3,0.5", "--leave-out", "5",
                 "--out", "cv.json", "--quiet"]) == 0
    cv = json.loads((workdir / "cv.json").read_text())
    assert cv["selected"] in (0.3, 0.5) and cv["config"]["leave_out"] == 5
    assert main(["bandwidth", "--input", "data.csv", "--out", "cv.json", "--quiet"]) == 1
    assert main(["simulate", "--shape", "12x12", "--trend-amplitude", "1", "--out", "t.csv", "--quiet"]) == 0
    assert main(["detrend", "--input", "t.csv", "--trend-kernel-order", "4", "--out", "dt.csv", "--quiet"]) == 0
    assert (workdir / "dt.trends.json").exists() and (workdir / "dt.csv.manifest.json").exists()
    assert main(["mc", "--shape", "10x10", "--reps", "3", "--probes", "0.4,0.6", "--report", "mc.json",
                 "--quiet"]) == 0
    rep = json.loads((workdir / "mc.json").read_text())
    assert rep["reps"] == 3 and len(rep["coverage"]) == 2


def test_outputs_reproducible_from_manifest(workdir):
    argv = ["fit", "--input", "data.csv", "--loss", "huber", "--bandwidth", "0.35", "--out", "a.json", "--quiet"]
    assert main(argv) == 0
    first = (workdir / "a.json").read_bytes()
    assert main(_manifest(workdir / "a.json")["argv"]) == 0
    assert (workdir / "a.json").read_bytes() == first


def test_threads_do_not_change_results(workdir):
    base = ["fit", "--input", "data.csv", "--bandwidth", "0.3", "--quiet"]
    assert main(base + ["--threads", "1", "--out", "t1.json"]) == 0
    assert main(base + ["--threads", "4", "--out", "t4.json"]) == 0
    assert (workdir / "t1.json").read_bytes() == (workdir / "t4.json").read_bytes()
    assert main(base + ["--threads", "0", "--out", "t0.json"]) == 1


def test_env_thread_fallback(monkeypatch):
    monkeypatch.setattr(_parallel, "_default_threads", None)
    monkeypatch.setenv("SQFC_THREADS", "3")
    assert _parallel.default_threads() == 3


def test_simulate_output_columns(workdir):
    header = (workdir / "data.csv").read_text().splitlines()[0]
    assert header == "i1,i2,y,x1,u"
    arr = np.loadtxt(workdir / "data.csv", delimiter=",", skiprows=1)
    assert arr.shape == (100, 5)
