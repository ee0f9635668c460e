import os
from pathlib import Path

import numpy as np
import pytest

from nsfp import cli
from nsfp.config import RunConfig, format_config, parse_config, parse_config_text, with_overrides
from nsfp.errors import ConfigError
from nsfp.grid import Grid
from nsfp.io import atomic_write, read_snapshot, snapshot_text, write_snapshot
from nsfp.pde_solver import FieldSet

REFERENCE = Path(__file__).resolve().parent.parent / "configs" / "reference.ini"

SMALL = """
[grid]
cells = 16
[scenario]
t_end = 0.02
[penalty]
h = 0.35
[output]
directory = {out}
"""


def test_reference_file_is_the_default():
    assert parse_config(REFERENCE) == RunConfig()
    assert REFERENCE.read_text() == format_config(RunConfig())


def test_format_round_trip_with_overrides():
    cfg = with_overrides(RunConfig(), penalty={"eps": 0.01, "xi": 1e-5}, grid={"cells": 32},
                         gravity={"enabled": False})
    assert parse_config_text(format_config(cfg, comments=False)) == cfg


def test_minimal_file_fills_defaults():
    cfg = parse_config_text("[grid]\n[scenario]\n[penalty]\n")
    assert cfg == RunConfig()


def test_missing_sections_are_listed():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("")
    msg = str(exc.value)
    assert "[grid], [scenario], [penalty]" in msg and "[sweep]" in msg


def test_beta_below_four_names_the_line():
    text = "[grid]\n[scenario]\n[penalty]\neps = 0.01\nbeta = 3\n"
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert exc.value.line == 5 and "beta" in str(exc.value)


def test_unknown_key_names_the_line():
    text = "[grid]\ncells = 16\n\n[scenario]\ncolour = red\n[penalty]\n"
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert exc.value.line == 5 and "colour" in str(exc.value) and "valid keys" in str(exc.value)


@pytest.mark.parametrize("text,line", [
    ("[grid]\ncells = many\n[scenario]\n[penalty]\n", 2),
    ("[grid]\n[scenario]\n[penalty]\n[moon]\n", 4),
    ("[grid]\n[scenario]\nsupport_radius = 1.5\n[penalty]\n", 3),
    ("[grid]\n[scenario]\n[penalty]\n[sweep]\neps_values = 1, 2, 3, 4\n", 5),
    ("cells = 3\n[grid]\n", 1),
])
def test_bad_values_report_lines(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert exc.value.line == line


def test_auto_floors_follow_schedule():
    cfg = parse_config_text("[grid]\n[scenario]\n[penalty]\nh = 0.5\nxi = 1e-4\n")
    p = cfg.penalty_params
    assert (p.lambda_, p.nu_, p.xi_) == (0.5, 0.125, 1e-4)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "absent.ini")


# ------------------------------------------------------------------- io


def _fields(g):
    rng = np.random.default_rng(0)
    arr = lambda: rng.normal(size=g.shape)  # noqa: E731
    return FieldSet(arr(), rng.normal(size=(g.dim,) + g.shape), arr(), arr(), arr(), arr())


def test_snapshot_header_and_round_trip(tmp_path):
    g = Grid((4, 3), (-1.0, -0.5), (1.0, 1.0))
    f = _fields(g)
    text = snapshot_text(f, g, 0.125)
    head = text.splitlines()[:6]
    assert head == ["# nsfp snapshot", "# dims 4 3", "# spacing 0.5 0.5", "# lower -1.0 -0.5", "# time 0.125",
                    "# fields rho u_x u_y E theta Psi theta_tilde"]
    path = tmp_path / "snap.txt"
    write_snapshot(path, f, g, 0.125)
    meta, data = read_snapshot(path)
    assert meta["dims"] == (4, 3) and meta["time"] == 0.125
    assert np.array_equal(data["rho"], f.rho) and np.array_equal(data["u_y"], f.u[1])
    assert np.array_equal(data["theta_tilde"], f.theta_tilde)


def test_atomic_write_replaces_and_cleans_up(tmp_path):
    path = tmp_path / "sub" / "out.txt"
    atomic_write(path, "one")
    atomic_write(path, "two")
    assert path.read_text() == "two"
    assert os.listdir(path.parent) == ["out.txt"]

    class Boom:
        def __str__(self):
            raise RuntimeError

    with pytest.raises(TypeError):
        atomic_write(path, Boom())
    assert path.read_text() == "two" and os.listdir(path.parent) == ["out.txt"]


# ------------------------------------------------------------------ cli


def _write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_cli_usage_errors(capsys):
    assert cli.main([]) == 1
    assert cli.main(["fly"]) == 1
    assert cli.main(["sweep", "x.ini", "--param", "theta"]) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_print_defaults(capsys):
    assert cli.main(["print-defaults"]) == 0
    assert parse_config_text(capsys.readouterr().out) == RunConfig()


def test_cli_config_errors(tmp_path, capsys):
    assert cli.main(["run", _write(tmp_path, "")]) == 2
    assert "missing required sections" in capsys.readouterr().err
    assert cli.main(["run", _write(tmp_path, "[grid]\n[scenario]\n[penalty]\nbeta = 3\n")]) == 2
    err = capsys.readouterr().err
    assert "line 4" in err and "beta" in err and ">= 4" in err


def test_cli_audit_eos(tmp_path, capsys):
    assert cli.main(["audit-eos", str(REFERENCE)]) == 0
    assert capsys.readouterr().out.strip().endswith("overall: PASS")


def test_cli_validate_geometry(tmp_path, capsys):
    path = _write(tmp_path, SMALL.format(out=tmp_path / "o"))
    assert cli.main(["validate-geometry", path, "--samples", "3"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_volume_floor_exit_code(tmp_path, capsys):
    text = SMALL.format(out=tmp_path / "o").replace("t_end = 0.02", "t_end = 0.02\nM0 = 50")
    path = _write(tmp_path, text)
    assert cli.main(["run", path]) == 4
    assert "invariant violation" in capsys.readouterr().err


def test_cli_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["run", _write(tmp_path, SMALL.format(out=out))]) == 0
    printed = capsys.readouterr().out
    assert "relative mass drift" in printed and "superlinear monitors" in printed
    meta, data = read_snapshot(out / "final_state.txt")
    assert meta["dims"] == (16, 16) and meta["time"] == pytest.approx(0.02)
    cols = (out / "diagnostics.csv").read_text().splitlines()
    assert cols[0].startswith("step,t,dt,mass")
    assert len(cols) >= 3
