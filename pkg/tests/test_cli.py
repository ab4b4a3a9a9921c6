import json
import os

import pytest
import yaml

from ksctl.cli import ConfigError, main, parse_config


def write_cfg(tmp_path, name="cfg.yaml", **sections):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(sections))
    return str(path)


def small_sections(outdir, **extra):
    base = {
        "grid": {"n": 24, "m": 32},
        "solver": {"n_samples": 3},
        "io": {"outdir": str(outdir)},
    }
    base.update(extra)
    return base


def test_defaults_fill_in(tmp_path):
    cfg = parse_config(write_cfg(tmp_path))
    assert cfg.grid["n"] == 50
    assert cfg.physics["a"] == 10.0
    assert cfg.solver["tau"] == 1e-8
    assert cfg.io["format"] == "both"


def test_all_violations_reported_at_once(tmp_path):
    path = write_cfg(
        tmp_path,
        grid={"n": 4, "m": 8},
        physics={"M2": 3.0, "eps": 2.0},
        weights={"omega_prime": [0.1, 0.9]},
    )
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    text = "; ".join(err.value.violations)
    assert len(err.value.violations) >= 5
    assert "steady-state compatibility" in text
    assert "nesting rule" in text
    assert "at least 8" in text
    assert "(0, 1]" in text


def test_unknown_keys_rejected(tmp_path):
    path = write_cfg(tmp_path, grid={"dx": 0.1})
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(path)


def test_override_parsing(tmp_path):
    path = write_cfg(tmp_path)
    cfg = parse_config(path, {"grid.n": 32, "physics.eps": 0.5,
                              "physics.eps_list": [1.0, 0.5]})
    assert cfg.grid["n"] == 32
    assert cfg.physics["eps"] == 0.5
    assert cfg.physics["eps_list"] == [1.0, 0.5]
    with pytest.raises(ConfigError, match="unknown override"):
        parse_config(path, {"grid.dx": 0.1})


def test_unknown_command_exits_1(tmp_path, capsys):
    path = write_cfg(tmp_path, **small_sections(tmp_path / "out"))
    code = main(["frobnicate", "--config", path])
    assert code == 1
    assert "unknown command" in capsys.readouterr().err


def test_config_error_exits_1(tmp_path, capsys):
    path = write_cfg(tmp_path, physics={"M2": 1.0})
    code = main(["simulate", "--config", path])
    assert code == 1
    assert "steady-state compatibility" in capsys.readouterr().err


def test_simulate_steady_state_columns(tmp_path):
    outdir = tmp_path / "out"
    path = write_cfg(tmp_path, **small_sections(outdir,
                                                physics={"delta": 0.0}))
    assert main(["simulate", "--config", path]) == 0
    csvs = [f for f in os.listdir(outdir) if f.endswith(".csv")]
    assert len(csvs) == 1
    rows = (outdir / csvs[0]).read_text().strip().splitlines()
    header = rows[0].split(",")
    i_mass = header.index("mass_u_pp")
    i_dev = header.index("dev_u_pp")
    masses = [float(row.split(",")[i_mass]) for row in rows[1:]]
    devs = [float(row.split(",")[i_dev]) for row in rows[1:]]
    # constant columns up to the per-step solver roundoff
    assert max(masses) - min(masses) < 1e-12 * abs(masses[0])
    assert max(devs) < 1e-11


def test_float_serialization_has_17_significant_digits(tmp_path):
    outdir = tmp_path / "out"
    path = write_cfg(tmp_path, **small_sections(outdir))
    assert main(["simulate", "--config", path]) == 0
    csvs = [f for f in os.listdir(outdir) if f.endswith(".csv")]
    body = (outdir / csvs[0]).read_text().strip().splitlines()
    header = body[0].split(",")
    val = body[2].split(",")[header.index("dev_u_pp")]
    assert float(val) == float(f"{float(val):.17g}")
    assert len(val.replace(".", "").replace("-", "").lstrip("0")) >= 15


def test_determinism_byte_identical(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    p1 = write_cfg(tmp_path, "c1.yaml", **small_sections(out1))
    p2 = write_cfg(tmp_path, "c2.yaml", **small_sections(out2))
    assert main(["control-linear", "--config", p1]) == 0
    assert main(["control-linear", "--config", p2]) == 0
    c1 = [f for f in os.listdir(out1) if f.endswith(".csv")][0]
    c2 = [f for f in os.listdir(out2) if f.endswith(".csv")][0]
    assert c1 == c2                       # same config hash
    assert (out1 / c1).read_bytes() == (out2 / c2).read_bytes()


def test_eps_sweep_csv_one_row_per_eps(tmp_path):
    outdir = tmp_path / "out"
    path = write_cfg(tmp_path, **small_sections(
        outdir, physics={"eps_list": [1.0, 0.1]}))
    assert main(["eps-sweep", "--config", path]) == 0
    csvs = [f for f in os.listdir(outdir) if f.startswith("eps-sweep")
            and f.endswith(".csv")]
    rows = (outdir / csvs[0]).read_text().strip().splitlines()
    assert len(rows) == 3                 # header + one row per eps
    summary = json.loads(
        (outdir / csvs[0].replace(".csv", ".json")).read_text())["summary"]
    assert summary["uniformity_ratio"] >= 1.0


def test_carleman_csv_columns(tmp_path):
    outdir = tmp_path / "out"
    path = write_cfg(tmp_path, **small_sections(outdir))
    assert main(["carleman", "--config", path, "--solver.n_samples=2"]) == 0
    csvs = [f for f in os.listdir(outdir) if f.startswith("carleman")
            and f.endswith(".csv")]
    rows = (outdir / csvs[0]).read_text().strip().splitlines()
    assert rows[0] == "inequality,sample_id,s,lambda,eps,lhs,rhs,ratio"
    assert {r.split(",")[0] for r in rows[1:]} == {"thm2.2", "lem3.1", "lemA.1"}


def test_control_nonlinear_exit_codes(tmp_path):
    outdir = tmp_path / "out"
    path = write_cfg(tmp_path, **small_sections(outdir))
    assert main(["control-nonlinear", "--config", path]) == 0
    # starving the Picard loop of iterations must signal non-convergence
    assert main(["control-nonlinear", "--config", path,
                 "--solver.maxit=1", "--solver.tol=1e-14"]) == 2


def test_carleman_ratio_beyond_double_is_a_decimal_literal(tmp_path):
    # the refined-inequality constant grows like exp(2 s |beta*|); at the top
    # of the default s-scan it exceeds the double range and must be printed
    # from its log, never as inf
    outdir = tmp_path / "out"
    path = write_cfg(tmp_path, **small_sections(
        outdir, weights={"sigma0": 0.3}))
    assert main(["carleman", "--config", path, "--solver.n_samples=2"]) == 0
    csvf = [f for f in os.listdir(outdir) if f.endswith(".csv")][0]
    rows = (outdir / csvf).read_text().strip().splitlines()
    ratios = [r.split(",")[-1] for r in rows[1:] if r.startswith("lem3.1")]
    assert all(v != "inf" for v in ratios)
    assert any("e+" in v and float(v.split("e+")[1]) > 308 for v in ratios)
