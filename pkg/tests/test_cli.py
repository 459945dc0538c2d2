import json
import os
import subprocess
import sys

import numpy as np
import pytest

from sigmalab import cli, io


@pytest.fixture
def outroot(tmp_path, monkeypatch):
    monkeypatch.setenv(io.OUTDIR_ENV, str(tmp_path))
    return tmp_path


def run(*argv):
    return cli.main(list(argv) + ["--quiet"])


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


# --- probe-ineq ----------------------------------------------------------------------


def test_probe_ineq_maclaurin(outroot):
    assert run("probe-ineq", "--suite", "maclaurin", "--n", "6", "--k", "3", "--samples", "20000", "--seed", "42") == 0
    d = outroot / "probe-ineq"
    rows = io.read_csv(str(d / "probe-ineq.csv"))
    assert {r["check"] for r in rows} >= {"maclaurin", "trace_identity"}
    assert all(float(r["worst_residual"]) >= 0 and r["seed"] == "42" for r in rows)
    m = manifest(d)
    assert m["exit_code"] == 0 and m["seed"] == 42 and m["config_digest"] == rows[0]["config_digest"]


def test_probe_ineq_csv_bytes_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["probe-ineq", "--suite", "dominance", "--n", "5", "--k", "4", "--samples", "5000",
                         "--seed", "7", "--outdir", str(d), "--quiet"]) == 0
    assert (a / "probe-ineq.csv").read_bytes() == (b / "probe-ineq.csv").read_bytes()
    cli.main(["probe-ineq", "--suite", "dominance", "--n", "5", "--k", "4", "--samples", "5000",
              "--seed", "8", "--outdir", str(b), "--quiet"])
    assert (a / "probe-ineq.csv").read_bytes() != (b / "probe-ineq.csv").read_bytes()


@pytest.mark.parametrize("suite", ["chou-wang", "concavity", "barrier"])
def test_probe_ineq_other_suites(outroot, suite):
    assert run("probe-ineq", "--suite", suite, "--n", "5", "--k", "3", "--samples", "2000") == 0
    rows = io.read_csv(str(outroot / "probe-ineq" / "probe-ineq.csv"))
    assert all(r["violations"] == "0" for r in rows)


def test_probe_ineq_violation_exit(outroot):
    # a negative tolerance makes the exact identities count as violations
    assert run("probe-ineq", "--suite", "barrier", "--samples", "3", "--tol", "-1") == cli.EXIT_VIOLATION
    assert manifest(outroot / "probe-ineq")["status"] == "violation"


# --- probe-degenerate ---------------------------------------------------------------


def test_probe_degenerate_torus_with_j_probe(outroot):
    code = run("probe-degenerate", "--domain", "torus", "--g", "20*(1-cos(x))*(1+0.5*cos(y))",
               "--eps", "1e-1:1e-4:decade", "--alpha", "1/3,7/15", "--res", "32", "--jk", "5", "--max-factor", "2")
    assert code == 0
    d = outroot / "probe-degenerate"
    rows = io.read_csv(str(d / "probe-degenerate.csv"))
    assert len(rows) == 4 and "J_K3" in rows[0] and "complex_K[0.466667]" in rows[0]
    stab = json.loads((d / "stability.json").read_text())
    assert all(v < 2 for v in stab.values())


def test_probe_degenerate_factor_threshold(outroot):
    code = run("probe-degenerate", "--domain", "interval", "--g", "20*(1-cos(2*pi*x))",
               "--eps", "1e-1:1e-3:decade", "--res", "101", "--max-factor", "1")
    assert code == cli.EXIT_VIOLATION


def test_probe_degenerate_sharpness(outroot):
    assert run("probe-degenerate", "--sharpness", "--alpha", "0.55", "--betas", "1e-2:1e-6:decade") == 0
    rows = io.read_csv(str(outroot / "probe-degenerate" / "probe-degenerate.csv"))
    assert float(rows[0]["loglog_slope"]) == pytest.approx(-1 / 3, abs=0.05)


def test_probe_degenerate_family_file(outroot, tmp_path):
    fam = tmp_path / "fam.cfg"
    fam.write_text("[family]\ndomain = sphere\ng = 20*x3**2\neven = true\neps = 1e-1:1e-3:decade\n")
    assert run("probe-degenerate", "--family", str(fam), "--res", "16") == 0
    m = manifest(outroot / "probe-degenerate")
    assert m["config"]["family"]["g"] == "20*x3**2"


def test_probe_degenerate_config_errors(outroot):
    assert run("probe-degenerate", "--domain", "sphere", "--g", "x3**2") == cli.EXIT_CONFIG
    assert run("probe-degenerate", "--domain", "torus", "--g", "cos(x)") == cli.EXIT_CONFIG
    assert run("probe-degenerate", "--domain", "torus", "--g", "1", "--eps", "1e-3,1e-1") == cli.EXIT_CONFIG
    assert run("probe-degenerate", "--domain", "interval", "--g", "1+x", "--jk", "5") == cli.EXIT_CONFIG
    assert run("probe-degenerate", "--domain", "torus", "--g", "open('x')") == cli.EXIT_CONFIG


# --- solves ---------------------------------------------------------------------------


def test_solve_cm_constant(outroot):
    assert run("solve-cm", "--k", "2", "--res", "48", "--f", "constant", "--u0", "1.3", "--text") == 0
    d = outroot / "solve-cm"
    rec = io.read_csv(str(d / "solve-cm.csv"))[0]
    assert rec["converged"] == "true"
    assert float(rec["u_min"]) == pytest.approx(1, abs=1e-12) and float(rec["u_max"]) == pytest.approx(1, abs=1e-12)
    u = io.load_fields(str(d / "solution.npz"))["u"]
    np.testing.assert_allclose(u, 1, atol=1e-12)
    assert io.read_field_text(str(d / "solution.txt"))["kind"] == "sphere"


def test_solve_cm_incompatible_and_nonconvergent(outroot):
    assert run("solve-cm", "--k", "2", "--res", "16", "--f", "1 + 0.5*x3") == cli.EXIT_CONFIG
    code = run("solve-cm", "--k", "2", "--res", "24", "--f", "1 + 0.3*x3**2", "--max-iter", "1", "--tol", "1e-13")
    assert code == cli.EXIT_SOLVER
    assert manifest(outroot / "solve-cm")["status"] == "not converged"
    assert run("solve-cm", "--k", "3", "--res", "16") == cli.EXIT_CONFIG
    assert run("solve-cm", "--k", "2", "--res", "16", "--u0", "-1") == cli.EXIT_CONFIG


def test_solve_torus_and_grid_file_input(outroot):
    assert run("solve-torus", "--k", "2", "--n-c", "2", "--res", "8", "--f", "1 + 0.1*cos(x1)*cos(y2)") == 0
    sol = outroot / "solve-torus" / "solution.npz"
    assert io.load_fields(str(sol))["kind"] == "torus"
    copy = outroot / "f.npz"
    copy.write_bytes(sol.read_bytes())
    assert run("solve-torus", "--k", "2", "--n-c", "2", "--res", "8", "--f", str(copy)) == 0
    assert run("solve-torus", "--k", "2", "--n-c", "2", "--res", "12", "--f", str(copy)) == cli.EXIT_CONFIG
    assert run("solve-torus", "--k", "2", "--n-c", "2", "--res", "8", "--f", "1.5", "--no-rescale") == cli.EXIT_CONFIG


# --- sweeps ----------------------------------------------------------------------------


def test_sweep_torus_one_row_per_eps(outroot, tmp_path):
    fam = tmp_path / "fam.cfg"
    fam.write_text("[family]\ndomain = torus\nn = 2\ng = (1 - cos(x1))**2\n")
    assert run("sweep-torus", "--k", "2", "--family", str(fam), "--eps", "1e-1:1e-6:decade", "--res", "8") == 0
    d = outroot / "sweep-torus"
    rows = io.read_csv(str(d / "sweep-torus.csv"))
    assert [float(r["eps"]) for r in rows] == pytest.approx([1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
    head = list(rows[0])[:8]
    assert head == ["seed", "config_digest", "eps", "inf_f", "sup_sigma1", "u_inf_norm", "iterations", "residual"]
    assert "x_ratio" in rows[0]
    z = io.load_fields(str(d / "solutions.npz"))
    assert len([key for key in z if key.startswith("u_")]) == 6


def test_sweep_cm_ring_family(outroot):
    code = run("sweep-cm", "--domain", "sphere", "--even", "--g", "4*(x3**2 - 0.5)**2", "--k", "2",
               "--eps", "1e-1:1e-3:decade", "--res", "16")
    assert code == 0
    stab = json.loads((outroot / "sweep-cm" / "stability.json").read_text())
    assert stab["sup_sigma1"] < 2


def test_sweep_errors(outroot):
    assert run("sweep-cm", "--domain", "sphere", "--even", "--g", "x3**2", "--res", "8") == cli.EXIT_CONFIG
    assert run("sweep-torus", "--domain", "sphere", "--even", "--g", "x3**2", "--k", "2") == cli.EXIT_CONFIG


# --- spectrum-check -------------------------------------------------------------------


def test_spectrum_check(outroot):
    assert run("spectrum-check", "--n", "2", "--res", "16") == 0
    assert run("spectrum-check", "--n", "3", "--res", "16") == cli.EXIT_VIOLATION
    rows = io.read_csv(str(outroot / "spectrum-check" / "spectrum-check.csv"))
    assert rows[0]["index"] == "0"


# --- plumbing --------------------------------------------------------------------------


def test_argparse_errors_exit_2(outroot, capsys):
    assert cli.main(["probe-ineq"]) == 2
    assert cli.main(["no-such-command"]) == 2
    assert cli.main(["probe-ineq", "--suite", "maclaurin", "--bogus"]) == 2
    assert cli.main(["probe-ineq", "--suite", "maclaurin", "--delta", "abc"]) == 2


def test_io_error_exit_5(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["spectrum-check", "--res", "8", "--outdir", str(blocker / "sub"), "--quiet"]) == cli.EXIT_IO


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "sigmalab.cli", "spectrum-check", "--res", "8", "--outdir", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "passed=True" in out.stdout
    assert os.path.exists(tmp_path / "manifest.json")
