import csv
import json

import numpy as np
import pytest

from kslab import cli, dynamics
from kslab.config import ConfigError, build_run, canonical_text, config_hash, parse_config
from kslab.constants import ModelParams, thresholds
from kslab.field import GridSpec, ScalarField, lp_norm, mass, write_field

SMALL = """\
# small smoke configuration
n = 3
N = 16
L = 20
m = 1.25
init.kind = gaussian_blob
init.ratio = 0.25
t_end = 0.01
snapshot_every = 2
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ---------------------------------------------------------------- config


def test_parse_config_basic():
    cfg = parse_config("m = 1.25  # exponent\n\nN=32\n")
    assert cfg == {"m": "1.25", "N": "32"}


@pytest.mark.parametrize(
    "text,needle",
    [
        ("m 1.25\n", "expected"),
        ("m = \n", "empty"),
        ("colour = red\n", "unknown key"),
        ("m = 1.2\nm = 1.3\n", "duplicate"),
    ],
)
def test_parse_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_config_hash_ignores_layout():
    a = "m = 1.25\nN = 32\ninit.center = 0, 0, 0\n"
    b = "# header\nN=32   # grid\n\n init.center=0,0,0\nm   =   1.25\n"
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash("m = 1.26\nN = 32\ninit.center = 0, 0, 0\n")
    assert canonical_text(parse_config(a)).splitlines()[0] == "N=32"


def test_build_run_ratio_and_defaults():
    setup = build_run(parse_config(SMALL))
    thr = thresholds(setup.params).threshold_norm
    assert lp_norm(setup.rho0, 1.2) / thr == pytest.approx(0.25, rel=1e-12)
    assert setup.params.mass == pytest.approx(mass(setup.rho0), rel=1e-15)
    assert setup.solver.epsilon == pytest.approx(1e-6 * setup.rho0.values.max())
    assert setup.solver.mollifier.width == pytest.approx(2 * setup.grid.dx)


def test_build_run_errors():
    with pytest.raises(ConfigError, match="missing"):
        build_run(parse_config("N = 16\n"))
    with pytest.raises(ConfigError):
        build_run(parse_config("m = 1.5\nN = 16\n"))
    with pytest.raises(ConfigError, match="bad value"):
        build_run(parse_config("m = 1.25\nN = sixteen\n"))
    with pytest.raises(ConfigError, match="init.center"):
        build_run(parse_config("m = 1.25\nN = 16\ninit.center = 0, 0\n"))


# ---------------------------------------------------------------- constants


def test_constants_table(capsys):
    assert cli.main(["constants", "--n", "3", "--m", "1.25", "--mass", "1"]) == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("threshold_norm"))
    assert float(line.split()[1]) == pytest.approx(1080.27, rel=1e-5)


def test_constants_json(capsys):
    assert cli.main(["constants", "--m", "1.25", "--json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert set(d) == {"sobolev_S_n", "hls_C_n", "m_critical", "m_fujita", "s_star", "F_star", "threshold_norm"}
    assert all(isinstance(v, float) for v in d.values())


def test_constants_outside_window(capsys):
    assert cli.main(["constants", "--n", "3", "--m", "1.5"]) == 2
    err = capsys.readouterr().err
    assert "1.2" in err and "1.333" in err


# ---------------------------------------------------------------- classify


def test_classify_zero_preset(capsys):
    assert cli.main(["classify", "--preset", "zero", "--N", "16"]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "subcritical"


def test_classify_blob_presets(capsys):
    assert cli.main(["classify", "--preset", "blob", "--N", "32", "--ratio", "0.25"]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "subcritical"
    assert cli.main(["classify", "--preset", "blob", "--N", "32", "--ratio", "64"]) == 3
    assert json.loads(capsys.readouterr().out)["verdict"] == "supercritical_norm"
    assert cli.main(["classify", "--preset", "blob", "--N", "32", "--ratio", "2"]) == 4


def test_classify_init_file(tmp_path, capsys):
    g = GridSpec(3, 32, 20.0)
    rho = ScalarField(g, 0.01 * np.exp(-g.radius_squared() / 2))
    path = tmp_path / "rho.ksf"
    write_field(path, rho)
    assert cli.main(["classify", "--init", str(path)]) == 0
    v = json.loads(capsys.readouterr().out)
    assert v["threshold_norm"] == pytest.approx(thresholds(ModelParams(3, 1.25, mass(rho))).threshold_norm)
    # a zero-mass file has no threshold unless a mass is supplied
    write_field(path, ScalarField.zeros(g))
    assert cli.main(["classify", "--init", str(path)]) == 2
    assert "mass" in capsys.readouterr().err
    assert cli.main(["classify", "--init", str(path), "--mass", "1"]) == 0


def test_classify_corrupt_file(tmp_path, capsys):
    path = tmp_path / "rho.ksf"
    write_field(path, ScalarField.zeros(GridSpec(3, 8, 20.0)))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"KSFX"
    path.write_bytes(bytes(raw))
    assert cli.main(["classify", "--init", str(path)]) == 2
    assert "magic" in capsys.readouterr().err
    assert cli.main(["classify", "--init", str(tmp_path / "missing.ksf")]) == 2


# ---------------------------------------------------------------- verify-semigroup


def test_verify_semigroup_empty_battery(tmp_path):
    out = tmp_path / "b.csv"
    assert cli.main(["verify-semigroup", "--battery", "0", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 and lines[0] == "p,q,t,which,lhs,rhs,ratio"


def test_verify_semigroup_rejects_p_below_q(tmp_path, capsys, monkeypatch):
    called = []
    monkeypatch.setattr(cli, "estimate_battery", lambda *a, **k: called.append(1) or [])
    assert cli.main(["verify-semigroup", "--pairs", "4:2,2:4", "--out", str(tmp_path / "x.csv")]) == 2
    assert "q <= p" in capsys.readouterr().err
    assert not called


def test_verify_semigroup_small_battery(tmp_path):
    out = tmp_path / "b.csv"
    assert cli.main(["verify-semigroup", "--battery", "6", "--grid", "32", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 6
    assert all(float(r["ratio"]) <= 1 + 1e-6 for r in rows)


# ---------------------------------------------------------------- simulate


def test_simulate_outputs_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "diagnostics.csv").read_bytes() == (b / "diagnostics.csv").read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["outcome"] == "completed"
    assert man["config_hash"] == json.loads((b / "manifest.json").read_text())["config_hash"]
    for name in man["outputs"]:
        assert (a / name).exists()
    assert (a / "rho_0.ksf").exists() and (a / "c_0.ksf").exists()
    assert json.loads((a / "verdict.json").read_text())["verdict"] == "subcritical"
    rows = list(csv.DictReader((a / "diagnostics.csv").open()))
    assert float(rows[-1]["t"]) == 0.01


def test_simulate_t_end_zero(tmp_path):
    cfg = write_cfg(tmp_path, SMALL.replace("t_end = 0.01", "t_end = 0"))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert len((tmp_path / "o" / "diagnostics.csv").read_text().splitlines()) == 2


def test_simulate_bad_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL + "bogus = 1\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "bogus" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")]) == 2


def test_simulate_blowup_flag_exit(tmp_path, monkeypatch):
    monkeypatch.setattr(dynamics, "DT_FLOOR", 1.0)
    cfg = write_cfg(tmp_path, SMALL)
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 5
    assert json.loads((out / "manifest.json").read_text())["outcome"] == "numerical_blowup_flag"
    assert (out / "diagnostics.csv").exists()


# ---------------------------------------------------------------- sweep

SWEEP = """\
n = 3
N = 24
L = 20
m = 1.25
init.ratio = 1
t_end = 0
sweep.scale = 16, 0.25, 1.0
"""


def run_sweep(tmp_path, name, jobs):
    cfg = write_cfg(tmp_path, SWEEP, "sweep.cfg")
    out = tmp_path / name
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out), "--jobs", str(jobs)]) == 0
    return out


def test_sweep_transition_and_job_independence(tmp_path):
    a = run_sweep(tmp_path, "j1", 1)
    b = run_sweep(tmp_path, "j2", 2)
    text = (a / "aggregate.csv").read_text()
    assert text == (b / "aggregate.csv").read_text()
    rows = list(csv.DictReader(text.splitlines()))
    assert [float(r["scale"]) for r in rows] == [0.25, 1.0, 16.0]
    # critical ratio grows like scale**1.5, crossing 1 at scale 1
    for r in rows:
        ratio = float(r["norm_crit0"]) / float(r["threshold_norm"])
        assert ratio == pytest.approx(float(r["scale"]) ** 1.5, rel=1e-9)
    assert [r["verdict"] for r in rows] == ["subcritical", "indeterminate", "supercritical_norm"]
    assert all(r["outcome"] == "completed" for r in rows)


def test_sweep_single_point_matches_simulate(tmp_path):
    cfg_text = SMALL.replace("t_end = 0.01", "t_end = 0")
    cfg = write_cfg(tmp_path, cfg_text, "one.cfg")
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "s" / "run_000" / "diagnostics.csv").read_bytes() == (
        tmp_path / "d" / "diagnostics.csv"
    ).read_bytes()
    assert len((tmp_path / "s" / "aggregate.csv").read_text().splitlines()) == 2


def test_sweep_records_failures(tmp_path):
    cfg = write_cfg(tmp_path, SWEEP.replace("sweep.scale = 16, 0.25, 1.0", "sweep.m = 1.25, 1.5"), "bad.cfg")
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    rows = list(csv.DictReader((tmp_path / "o" / "aggregate.csv").open()))
    assert [r["outcome"] for r in rows] == ["completed", "error"]
