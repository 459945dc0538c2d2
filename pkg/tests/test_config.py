import os

import numpy as np
import pytest

from sigmalab import config, expr, io
from sigmalab.errors import ConfigError
from sigmalab.sphere import SphereGrid
from sigmalab.torusgrid import TorusGrid

# --- expression grammar -------------------------------------------------------------


def test_expression_evaluates_trig_polynomials():
    e = expr.parse("20*(1 - cos(x))*(1 + 0.5*cos(y))", "torus", 1)
    env = {"x": np.array([0.0, np.pi]), "y": np.array([0.0, 0.0])}
    np.testing.assert_allclose(e(env), [0.0, 60.0])
    e = expr.parse("-x3**2 + 2*pi/pi + sin(x1)**2", "sphere", 2)
    assert e.names == {"x1", "x3"}
    np.testing.assert_allclose(e({"x1": 0.0, "x2": 0.0, "x3": 1.0}), 1.0)


@pytest.mark.parametrize(
    "src",
    [
        "__import__('os')",
        "exp(x)",
        "x ** x",
        "x if x else 1",
        "x // 2",
        "'a'",
        "True",
        "z",
        "cos(x, 1)",
        "[x]",
        "",
        "1 +",
        "x.real",
    ],
)
def test_expression_rejects_outside_grammar(src):
    with pytest.raises(ConfigError):
        expr.parse(src, "interval")


def test_coordinate_names():
    assert expr.coordinate_names("interval") == ("x",)
    assert expr.coordinate_names("sphere", 3) == ("x1", "x2", "x3", "x4")
    assert set(expr.coordinate_names("torus", 1)) == {"x1", "y1", "x", "y"}
    assert set(expr.coordinate_names("torus", 2)) == {"x1", "x2", "y1", "y2"}


def test_coordinate_env_torus_ordering():
    pts = np.array([[0.1, 0.2, 0.3, 0.4]])
    env = expr.coordinate_env("torus", 2, pts)
    assert env["x2"][0] == 0.2 and env["y1"][0] == 0.3


def test_expression_missing_value():
    with pytest.raises(ConfigError):
        expr.parse("x1 + x2", "sphere", 2)({"x1": 1.0})


# --- schedules and rules ----------------------------------------------------------


def test_parse_schedule_forms():
    assert config.parse_schedule("1e-1:1e-4:decade") == pytest.approx((1e-1, 1e-2, 1e-3, 1e-4))
    assert config.parse_schedule("1:1e-2:3") == pytest.approx((1, 1e-1, 1e-2))
    assert config.parse_schedule("0.5, 0.1, 0.01") == pytest.approx((0.5, 0.1, 0.01))
    assert config.parse_schedule([0.3, 0.2]) == pytest.approx((0.3, 0.2))


@pytest.mark.parametrize("bad", ["1e-3, 1e-1", "1e-1, 1e-1", "-1, -2", "a:b:decade", "1e-1:1e-3:weekly"])
def test_parse_schedule_rejects(bad):
    with pytest.raises(ConfigError):
        config.parse_schedule(bad)


def test_parse_schedule_not_decreasing_message():
    with pytest.raises(ConfigError, match="eps.*not decreasing"):
        config.parse_schedule([1e-3, 1e-1])


def test_exponent_rules():
    assert config.exponent(2, "paper-C21") == pytest.approx(1.5)
    assert config.exponent(5, "paper-C11") == pytest.approx(0.25)
    with pytest.raises(ConfigError):
        config.rule_name("paper-C99")


# --- validate_config ------------------------------------------------------------------


def test_sphere_without_even_flag_names_compatibility():
    with pytest.raises(ConfigError, match="moment compatibility condition"):
        config.validate_config({"domain": "sphere", "g": "x3**2"})


def test_increasing_schedule_rejected():
    with pytest.raises(ConfigError, match="not decreasing"):
        config.validate_config({"domain": "torus", "g": "1 - cos(x)", "eps": "1e-3, 1e-1"})


def test_valid_torus_family_fills_exponent():
    text = "[family]\ndomain = torus\nn = 2\ng = (1 - cos(x1))**2\nk = 2\neps = 1e-1:1e-6:decade\n"
    spec = config.validate_config(text)
    assert spec.p == pytest.approx(3 / (2 * 2 - 2))
    assert spec.rule == "paper-C21" and spec.rule_short == "C21"
    assert len(spec.eps) == 6 and spec.scan_min == pytest.approx(0, abs=1e-12)
    assert config.validate_config(text, k=1 + 1).digest() == spec.digest()


def test_config_file_and_parser_inputs(tmp_path):
    path = tmp_path / "fam.cfg"
    path.write_text("[family]\ndomain = sphere\ng = 20*x3**2\neven = true\n")
    spec = config.validate_config(str(path))
    assert spec.domain == "sphere" and spec.even and spec.n == 2
    assert config.validate_config(spec).as_dict() == spec.as_dict()


@pytest.mark.parametrize(
    "raw, field",
    [
        ({"domain": "torus", "g": "cos(x)"}, "g: negative"),
        ({"domain": "interval", "g": "x"}, "g: negative"),
        ({"domain": "disk", "g": "1"}, "domain"),
        ({"domain": "torus", "g": "1", "colour": "red"}, "unknown"),
        ({"domain": "sphere", "g": "1 + x3", "even": True}, "even"),
        ({"domain": "sphere", "g": "1", "even": True, "n": 4}, "n"),
        ({"domain": "torus", "g": "1", "n": 2, "k": 3}, "k"),
        ({"domain": "torus"}, "g"),
        ({"domain": "interval", "g": "1", "a": 1, "b": 0}, "interval"),
    ],
)
def test_invalid_families_name_field(raw, field):
    with pytest.raises(ConfigError, match=field):
        config.validate_config(raw)


def test_interval_scan_includes_ghost_nodes():
    # negative only just outside [0, 1]
    with pytest.raises(ConfigError):
        config.validate_config({"domain": "interval", "g": "(x + 0.001)*(1.001 - x)*1e3", "margin": 0.1})


def test_digest_is_canonical():
    assert config.config_digest({"a": 1, "b": [1.0, 2]}) == config.config_digest({"b": [1.0, 2], "a": 1})
    assert config.config_digest({"a": 1}) != config.config_digest({"a": 2})


# --- io --------------------------------------------------------------------------


def test_output_dir_resolution(tmp_path, monkeypatch):
    monkeypatch.setenv(io.OUTDIR_ENV, str(tmp_path / "env"))
    assert io.output_dir(None, "probe-ineq") == str(tmp_path / "env" / "probe-ineq")
    assert io.output_dir(str(tmp_path / "x"), "probe-ineq") == str(tmp_path / "x")
    monkeypatch.delenv(io.OUTDIR_ENV)
    monkeypatch.chdir(tmp_path)
    assert io.output_dir(None, "spectrum-check") == os.path.join(str(tmp_path), "sigmalab_runs", "spectrum-check")


def test_output_dir_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(io.PersistError):
        io.output_dir(str(blocker / "sub"), "c")


def test_atomic_write_replaces_without_leftovers(tmp_path):
    p = tmp_path / "a.txt"
    io.atomic_write(str(p), "one")
    io.atomic_write(str(p), "two")
    assert p.read_text() == "two"
    assert os.listdir(tmp_path) == ["a.txt"]
    io.atomic_write(str(tmp_path / "b.bin"), b"\x00\x01", mode="wb")
    assert (tmp_path / "b.bin").read_bytes() == b"\x00\x01"


def test_csv_provenance_and_determinism(tmp_path):
    rows = [{"x": 0.1, "ok": True}, {"x": 1 / 3, "ok": False, "extra": "s"}]
    a = io.csv_text(rows, 42, "abc")
    assert a == io.csv_text(rows, 42, "abc")
    assert a.splitlines()[0] == "seed,config_digest,x,ok,extra"
    io.write_csv(str(tmp_path / "r.csv"), rows, 42, "abc")
    back = io.read_csv(str(tmp_path / "r.csv"))
    assert back[1]["x"] == repr(1 / 3) and back[0]["seed"] == "42" and back[1]["config_digest"] == "abc"


def test_manifest_contents(tmp_path):
    import json

    p = io.write_manifest(
        str(tmp_path / "manifest.json"), argv=["sigmalab", "--g", "1 + x"], digest="d", seed=1, started=io.now(),
        outputs={"a": "b"}, config={"k": 2}, status="ok", exit_code=0,
    )
    m = json.loads(open(p).read())
    assert m["config_digest"] == "d" and m["seed"] == 1 and m["exit_code"] == 0
    assert m["command_line"] == "sigmalab --g '1 + x'" and m["config"] == {"k": 2}


def test_field_roundtrips(tmp_path):
    g = SphereGrid(8)
    u = np.cos(g.coords[2])
    io.save_fields(str(tmp_path / "u.npz"), g, u=u)
    d = io.load_fields(str(tmp_path / "u.npz"))
    assert (d["kind"], d["n"], d["res"]) == ("sphere", 2, 8)
    np.testing.assert_array_equal(d["u"], u)
    t = TorusGrid(2, 4)
    v = np.random.default_rng(0).normal(size=t.shape)
    io.atomic_write(str(tmp_path / "v.txt"), io.field_text(t, v))
    d = io.read_field_text(str(tmp_path / "v.txt"))
    assert (d["kind"], d["n"], d["res"]) == ("torus", 2, 4)
    np.testing.assert_array_equal(d["values"], v)
    with pytest.raises(io.PersistError):
        io.load_fields(str(tmp_path / "missing.npz"))
