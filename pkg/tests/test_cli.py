import io
import json
import subprocess
import sys

import numpy as np
import pytest

import kdeselect.experiments as experiments
from kdeselect.cli import DEFAULTS, SCHEMA_VERSION, cmd_kernel_info, main, read_sample
from kdeselect.estimators import fit_kde
from kdeselect.kernels import ProductKernel


@pytest.fixture
def sample_csv(tmp_path):
    x = np.random.default_rng(0).normal(size=100)
    path = tmp_path / "x.csv"
    path.write_text("\n".join(repr(float(v)) for v in x) + "\n")
    return path


def _data_rows(path):
    lines = path.read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    return body[0], body[1:], [ln for ln in lines if ln.startswith("#")]


def test_fit_fixed_bandwidth(sample_csv, tmp_path):
    out = tmp_path / "est.csv"
    assert main(["fit", "--input", str(sample_csv), "--output", str(out), "--h", "0.3"]) == 0
    header, rows, meta = _data_rows(out)
    assert header == "t1,value"
    assert "# h=0.29999999999999999" in meta
    assert any(m.startswith("# kernel=triangular order=1") for m in meta)
    assert any(f"schema_version={SCHEMA_VERSION}" in m for m in meta)
    vals = np.array([[float(c) for c in r.split(",")] for r in rows])
    est = fit_kde(read_sample(sample_csv), ProductKernel.from_name("triangular", 1, 1), 0.3, method="lattice")
    assert len(rows) == est.grid.size
    np.testing.assert_array_equal(vals[:, 0], est.grid.axes[0])
    np.testing.assert_array_equal(vals[:, 1], est.values)


def test_fit_single_node_grid(sample_csv, tmp_path):
    out = tmp_path / "est.csv"
    args = ["fit", "--input", str(sample_csv), "--output", str(out), "--h-min", "0.4", "--h-max", "0.4"]
    assert main(args) == 0
    trace = json.loads(out.with_suffix(".trace.json").read_text())
    assert trace["result"]["h_hat"] == [0.4]
    assert trace["schema_version"] == SCHEMA_VERSION
    assert trace["H"]["size"] == 1


def test_fit_is_byte_identical_on_rerun(sample_csv, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"est{k}.csv"
        trace = tmp_path / f"trace{k}.json"
        args = ["fit", "--input", str(sample_csv), "--output", str(out), "--trace", str(trace), "--s", "3",
                "--h-min", "0.1"]
        assert main(args) == 0
        outs.append((out.read_bytes(), trace.read_bytes()))
    assert outs[0] == outs[1]


def test_simulate_is_byte_identical_on_rerun(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        args = ["simulate", "--kind", "oracle-ratio", "--density", "mixture", "--n", "200", "--reps", "5",
                "--seed", "3", "--h-min", "0.1", "--output", str(out)]
        assert main(args) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    report = json.loads(outs[0])
    ratios = report["rows"][0]["ratios"]
    assert len(ratios) == 5 and all(r >= 1 for r in ratios)
    assert report["config"]["seed"] == 3


def test_config_file_and_flag_precedence(sample_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"h_min": 0.5, "h_max": 0.5, "kernel": "biweight"}))
    out = tmp_path / "est.csv"
    args = ["fit", "--input", str(sample_csv), "--output", str(out), "--config", str(cfg), "--h-max", "0.7",
            "--ratio", "1.4"]
    assert main(args) == 0
    trace = json.loads(out.with_suffix(".trace.json").read_text())
    assert trace["config"]["kernel"] == "biweight"
    assert trace["H"]["h_min"] == [0.5] and trace["H"]["h_max"] == [0.7]


@pytest.mark.parametrize(
    "content",
    ["1.0\nabc\n", "1.0,2.0\n3.0\n", "", "1.0\nnan\n"],
)
def test_malformed_input_exits_2(tmp_path, content):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    assert main(["fit", "--input", str(path), "--output", str(tmp_path / "o.csv"), "--h", "0.3"]) == 2


def test_missing_input_exits_2(tmp_path):
    assert main(["fit", "--input", str(tmp_path / "none.csv"), "--output", str(tmp_path / "o.csv")]) == 2


def test_header_and_tab_input(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text("a\tb\n1\t2\n3\t4.5\n")
    np.testing.assert_array_equal(read_sample(path), [[1, 2], [3, 4.5]])
    np.testing.assert_array_equal(read_sample(path, [1]), [[2], [4.5]])


@pytest.mark.parametrize(
    "extra",
    [
        ["--h-max", "1.5"],
        ["--h-min", "0.5", "--h-max", "0.2"],
        ["--ratio", "1.0"],
        ["--s", "0.5"],
        ["--kernel", "epanechnikov"],
        ["--order", "0"],
        ["--h", "-0.2"],
        ["--method", "fastest"],
    ],
)
def test_config_violations_exit_3(sample_csv, tmp_path, extra, capsys):
    args = ["fit", "--input", str(sample_csv), "--output", str(tmp_path / "o.csv")] + extra
    assert main(args) == 3
    assert "error" in capsys.readouterr().err


def test_simulate_config_errors_exit_3(tmp_path):
    out = str(tmp_path / "r.json")
    assert main(["simulate", "--density", "cauchy", "--output", out]) == 3
    assert main(["rates", "--n-list", "100,200,400", "--output", out]) == 3
    assert main(["simulate", "--kind", "rate", "--n-list", "100,200,400", "--output", out]) == 3
    assert main(["simulate", "--reps", "0", "--output", out]) == 3


def test_rate_study_size_message(tmp_path, capsys):
    main(["rates", "--n-list", "100,200,400", "--output", str(tmp_path / "r.json")])
    assert "need ≥ 4 sizes" in capsys.readouterr().err


def test_grid_cap_exits_4(tmp_path):
    path = tmp_path / "x.csv"
    x = np.random.default_rng(1).normal(size=(50, 2))
    path.write_text("\n".join(f"{a},{b}" for a, b in x))
    args = ["fit", "--input", str(path), "--output", str(tmp_path / "o.csv"), "--h-min", "0.001", "--ratio", "1.2"]
    assert main(args) == 4


def test_mass_leakage_exits_5(tmp_path, monkeypatch):
    monkeypatch.setattr(experiments, "LEAKAGE_TOL", 0.0)
    args = ["simulate", "--kind", "risk", "--density", "gaussian", "--n", "50", "--reps", "1", "--h", "0.3",
            "--output", str(tmp_path / "r.json")]
    assert main(args) == 5


def test_kernel_info_values():
    out = io.StringIO()
    assert cmd_kernel_info(dict(DEFAULTS, s_list="3"), out) == 0
    rows = dict(line.split(None, 1) for line in out.getvalue().splitlines())
    assert float(rows["norm_1"]) == pytest.approx(1.0, abs=1e-12)
    assert float(rows["norm_2"]) == pytest.approx(1.154700, abs=1e-6)
    assert float(rows["moment_0"]) == pytest.approx(1.0, abs=1e-12)
    assert abs(float(rows["moment_1"])) <= 1e-12
    assert "norm_3" in rows

    out = io.StringIO()
    cmd_kernel_info(dict(DEFAULTS, order=2), out)
    rows = dict(line.split(None, 1) for line in out.getvalue().splitlines())
    assert abs(float(rows["moment_1"])) <= 1e-8
    assert float(rows["norm_1"]) > 1.0
    assert float(rows["moment_0"]) == pytest.approx(1.0, abs=1e-12)


def test_kernel_info_unknown_kernel_exits_3():
    assert main(["kernel-info", "--kernel", "gauss"]) == 3


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "kdeselect", "kernel-info", "--kernel", "biweight", "--order", "2"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("kernel")
    proc = subprocess.run([sys.executable, "-m", "kdeselect", "fit", "--bogus"], capture_output=True, check=False)
    assert proc.returncode == 3
