"""End-to-end subcommand tests driving main() in process."""

import json
import math

import numpy as np
import pytest

from perimax import cli


def run(argv):
    return cli.main(argv)


def read_csv(path):
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


def test_voronoi_init_square(tmp_path, capsys):
    out = tmp_path / "o"
    code = run(["voronoi-init", "--polygon", "square", "--n", "4", "--equal",
                "--seed", "1", "--out", str(out)])
    assert code == 0
    header, rows = read_csv(out / "points.csv")
    assert header == ["x", "y"] and len(rows) == 4
    _, arows = read_csv(out / "areas.csv")
    devs = [abs(float(r[3])) for r in arows]
    assert max(devs) <= 1e-6
    assert (out / "cells.svg").read_text().startswith("<svg")
    assert "max area deviation" in capsys.readouterr().out


def test_voronoi_init_single_cell(tmp_path):
    out = tmp_path / "o"
    assert run(["voronoi-init", "--n", "1", "--out", str(out)]) == 0
    _, arows = read_csv(out / "areas.csv")
    assert float(arows[0][1]) == pytest.approx(1.0, abs=1e-12)


def test_voronoi_init_fractions_and_csv_polygon(tmp_path):
    poly = tmp_path / "tri.csv"
    poly.write_text("0.0,0.0\n2.0,0.0\n0.0,2.0\n")
    out = tmp_path / "o"
    code = run(["voronoi-init", "--polygon", f"csv:{poly}", "--fractions",
                "0.5,0.5", "--seed", "2", "--out", str(out)])
    assert code == 0
    _, arows = read_csv(out / "areas.csv")
    areas = sorted(float(r[1]) for r in arows)
    assert sum(areas) == pytest.approx(2.0, abs=1e-9)
    assert areas[0] == pytest.approx(1.0, abs=1e-5)


def test_voronoi_init_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["voronoi-init", "--n", "5", "--seed", "3", "--out", str(out)]) == 0
        outs.append((out / "points.csv").read_bytes())
    assert outs[0] == outs[1]


def test_config_file_with_flag_override(tmp_path):
    cfgfile = tmp_path / "c.json"
    cfgfile.write_text(json.dumps({"n": 3, "seed": 5}))
    out = tmp_path / "o"
    code = run(["voronoi-init", "--config", str(cfgfile), "--n", "4", "--out", str(out)])
    assert code == 0
    _, rows = read_csv(out / "points.csv")
    assert len(rows) == 4


def test_unknown_config_key_rejected(tmp_path):
    cfgfile = tmp_path / "c.json"
    cfgfile.write_text(json.dumps({"n": 3, "meshsize": 0.1}))
    assert run(["voronoi-init", "--config", str(cfgfile), "--out", str(tmp_path / "o")]) == 2


def test_validation_exit_codes(tmp_path):
    out = str(tmp_path / "o")
    assert run(["voronoi-init", "--fractions", "0.6,0.6", "--out", out]) == 2
    assert run(["fence", "--fractions", "1.5", "--out", out]) == 2
    assert run(["fence", "--polygon", "csv:/nonexistent.csv", "--out", out]) == 2
    assert run(["partition", "--n", "1", "--out", out]) == 2
    assert run(["partition", "--fractions", "0.5,0.4", "--out", out]) == 2


def test_fence_square(tmp_path, capsys):
    out = tmp_path / "o"
    code = run(["fence", "--polygon", "square", "--epsilon", "0.15",
                "--fractions", "0.5", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "energy/gamma" in text
    ratio = float(text.strip().split()[-1])
    assert 0.8 < ratio < 1.25
    header, rows = read_csv(out / "density.csv")
    assert header == ["node", "x", "y", "u"]
    vals = np.array([float(r[3]) for r in rows])
    assert vals.min() >= 0.0 and vals.max() <= 1.0
    _, hrows = read_csv(out / "energy_history.csv")
    energies = [float(r[1]) for r in hrows]
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))
    assert (out / "density.svg").exists()


def test_fence_deterministic(tmp_path):
    blobs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["fence", "--epsilon", "0.15", "--out", str(out)]) == 0
        blobs.append((out / "density.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_partition_two_phases(tmp_path, capsys):
    out = tmp_path / "o"
    code = run(["partition", "--n", "2", "--epsilon", "0.15", "--seed", "4",
                "--restarts", "2", "--out", str(out)])
    assert code == 0
    header, rows = read_csv(out / "density.csv")
    assert header == ["node", "x", "y", "u0", "u1"]
    us = np.array([[float(r[3]), float(r[4])] for r in rows])
    assert np.abs(us.sum(axis=1) - 1.0).max() <= 1e-8
    assert "energy/gamma" in capsys.readouterr().out


def test_maximize_smoke(tmp_path, capsys):
    out = tmp_path / "o"
    code = run(["maximize", "--n", "1", "--fractions", "0.5", "--niter", "2",
                "--nmod", "1", "--alpha", "0.05", "--epsilon", "0.2",
                "--modes", "2", "--perturb", "0.05", "--out", str(out)])
    assert code == 0
    header, rows = read_csv(out / "trace.csv")
    assert header[0] == "iteration" and len(rows) == 2
    data = json.loads((out / "shape.json").read_text())
    assert set(data) == {"a0", "a", "b"}
    assert len(data["a"]) == 2
    from perimax.shape_opt import RadialShape, shape_area
    s = RadialShape(data["a0"], tuple(data["a"]), tuple(data["b"]))
    assert shape_area(s) == pytest.approx(math.pi, abs=1e-9)
    assert (out / "shape_0000.svg").exists()
    assert (out / "shape_final.svg").exists()
    assert "isoperimetric ratio" in capsys.readouterr().out


def test_perimtrack_narrow(tmp_path, capsys):
    out = tmp_path / "o"
    code = run(["perimtrack", "--tmin", "1.95", "--tmax", "2.05",
                "--tstep", "0.01", "--out", str(out)])
    assert code == 0
    _, rows = read_csv(out / "perimeter_vs_t.csv")
    assert len(rows) == 11
    perims = [float(r[1]) for r in rows]
    assert all(np.isfinite(perims))
    text = capsys.readouterr().out
    kink = float(text.strip().split()[-1])
    assert 1.9 <= kink <= 2.1
    assert (out / "curve.svg").exists()