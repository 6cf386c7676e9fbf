import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from plaplab.cli import main, run
from plaplab.config import KINDS, ConfigError, load_config, parse_config
from plaplab.geometry import build_structured_mesh, write_field
from plaplab.seeding import stream

SQUARE = "1 + chi(0.375, 0.625, 0.375, 0.625)"


def base_config(kind, **extra):
    raw = {"kind": kind, "mesh": {"n": 8}, "seed": 3}
    if kind in ("mono", "detect"):
        raw.update(sigma1=SQUARE, sigma2="1")
    raw.update(extra)
    return raw


def write_config(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


# configuration


def test_defaults():
    cfg = parse_config({}, kind="solve")
    assert cfg.p == 2.0 and cfg.mesh["n"] == 16 and cfg.seed == 0
    assert cfg.tolerances["invariant"] == 1e-6
    assert cfg.dictionary["bumps"] == 8


@pytest.mark.parametrize(
    "raw,field",
    [
        ({"p": 1.0}, "p"),
        ({"p": "two"}, "p"),
        ({"mesh": {"n": 0}}, "mesh"),
        ({"sigma": "1 +"}, "sigma"),
        ({"bogus": 1}, "bogus"),
        ({"options": {"quantile": 0.5}}, "options.quantile"),
        ({"tolerances": {"invariant": -1}}, "tolerances.invariant"),
        ({"seed": -1}, "seed"),
        ({"A": [[1, 0]]}, "A"),
    ],
)
def test_field_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(dict(raw, kind="solve"))


def test_mono_requires_both_sigmas():
    with pytest.raises(ConfigError, match="sigma1"):
        parse_config({"kind": "mono"})


def test_kind_mismatch():
    with pytest.raises(ConfigError, match="kind"):
        parse_config({"kind": "dn"}, kind="solve")


def test_json_syntax_error_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "kind": "solve",\n  "p": 2,,\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        load_config(path)


def test_config_hash_ignores_output():
    a = parse_config(base_config("solve", output="x"))
    b = parse_config(base_config("solve", output="y"))
    c = parse_config(base_config("solve", p=3))
    assert a.config_hash == b.config_hash != c.config_hash


def test_field_file_coefficients(tmp_path):
    mesh = build_structured_mesh(n=8)
    write_field(tmp_path / "s.field", 2.0 + mesh.centroids[:, 0], location="cell")
    write_field(tmp_path / "sv.field", 2.0 + mesh.vertices[:, 0], location="vertex")
    cfg = parse_config(base_config("solve", sigma={"file": "s.field"}), base_dir=tmp_path)
    np.testing.assert_allclose(cfg.coefficients["sigma"].cells(mesh), 2.0 + mesh.centroids[:, 0])
    assert cfg.coefficients["sigma"].vertices(mesh) is None
    cfg = parse_config(base_config("solve", sigma={"file": "sv.field"}), base_dir=tmp_path)
    np.testing.assert_allclose(cfg.coefficients["sigma"].vertices(mesh), 2.0 + mesh.vertices[:, 0])
    np.testing.assert_allclose(cfg.coefficients["sigma"].cells(mesh), 2.0 + mesh.centroids[:, 0])


def test_matrix_expression():
    mesh = build_structured_mesh(n=4)
    cfg = parse_config(base_config("solve", A=[["2", 0.5], [0.5, "1 + x1"]]))
    A = cfg.matrix(mesh)
    assert A.shape == (mesh.n_cells, 2, 2)
    np.testing.assert_allclose(A[:, 1, 1], 1 + mesh.centroids[:, 0])
    assert parse_config(base_config("solve")).matrix(mesh) is None


def test_seed_streams_independent():
    a = stream(5, "alpha").random(4)
    np.testing.assert_array_equal(a, stream(5, "alpha").random(4))
    assert not np.array_equal(a, stream(5, "beta").random(4))
    assert not np.array_equal(a, stream(6, "alpha").random(4))


# runs


def test_solve_example(tmp_path, capsys):
    raw = base_config("solve", p=3, f="x1", options={"expect_energy": 1.0})
    rc = main(["solve", "--config", str(write_config(tmp_path, raw)), "--out", str(tmp_path / "out")])
    assert rc == 0
    assert "PASS converged" in capsys.readouterr().out
    summary = json.loads((tmp_path / "out" / "solution.json").read_text())
    assert summary["energy"] == pytest.approx(1.0, abs=1e-8)
    assert manifest(tmp_path / "out")["verdicts"]["expected_energy"] == "pass"


def test_mono_example(tmp_path):
    raw = {"kind": "mono", "mesh": {"n": 8}, "p": 2, "sigma1": "2", "sigma2": "1",
           "dictionary": {"linear": ["x1"], "bumps": 0}}
    out = tmp_path / "out"
    assert main(["mono", "--config", str(write_config(tmp_path, raw)), "--out", str(out)]) == 0
    rows = list(csv.reader((out / "triples.csv").open()))
    assert rows[0] == ["f_id", "lower", "middle", "upper"]
    label, *vals = rows[1]
    assert label == "x1"
    np.testing.assert_allclose([float(v) for v in vals], [0.5, 1.0, 1.0], atol=1e-8)
    assert manifest(out)["verdicts"]["sandwich"] == "pass"


def test_mono_ordering_violation_before_solving(tmp_path, capsys):
    raw = base_config("mono", sigma1="1", sigma2=SQUARE, options={"assert_ordering": True})
    out = tmp_path / "out"
    rc = main(["mono", "--config", str(write_config(tmp_path, raw)), "--out", str(out)])
    assert rc == 1
    assert "FAIL ordering" in capsys.readouterr().out
    m = manifest(out)
    assert m["verdicts"] == {"ordering": "fail"}
    assert not (out / "triples.csv").exists()


@pytest.mark.parametrize(
    "argv,code",
    [
        (["solve", "--config", "{missing}", "--out", "{out}"], 2),
        (["dn", "--config", "{cfg}", "--out", "{out}"], 2),
        (["solve", "--config", "{cfg}", "--seed", "-4", "--out", "{out}"], 2),
        (["solve", "--config", "{cfg}", "--out", "{file}"], 3),
    ],
)
def test_exit_codes(tmp_path, argv, code, capsys):
    paths = {
        "{cfg}": str(write_config(tmp_path, base_config("solve"))),
        "{missing}": str(tmp_path / "missing.json"),
        "{out}": str(tmp_path / "out"),
        "{file}": str(tmp_path / "cfg.json"),  # an existing regular file
    }
    assert main([paths.get(a, a) for a in argv]) == code
    assert "plaplab:" in capsys.readouterr().err


def test_refuses_foreign_output(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "keep.txt").write_text("mine")
    with pytest.raises(Exception, match="not empty"):
        run(parse_config(base_config("solve")), out)
    assert (out / "keep.txt").read_text() == "mine"


def test_rerun_replaces_previous_outputs(tmp_path):
    out = tmp_path / "out"
    run(parse_config(base_config("solve")), out)
    run(parse_config(base_config("solve", p=3)), out)
    assert manifest(out)["config_hash"] == parse_config(base_config("solve", p=3)).config_hash


@pytest.mark.parametrize("kind", KINDS)
def test_manifest_complete_and_reproducible(tmp_path, kind):
    cfg = parse_config(base_config(kind))
    a, b = tmp_path / "a", tmp_path / "b"
    ma = run(cfg, a)
    run(cfg, b)
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(ma.outputs)
    assert ma.verdicts and set(ma.verdicts.values()) <= {"pass", "fail"}
    for name in files:
        if name == "manifest.json":
            ja, jb = manifest(a), manifest(b)
            ja.pop("wall_time_s"), jb.pop("wall_time_s")
            assert ja == jb
        else:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_changes_randomised_outputs(tmp_path):
    run(parse_config(base_config("perturb", seed=1)), tmp_path / "a")
    run(parse_config(base_config("perturb", seed=2)), tmp_path / "b")
    assert (tmp_path / "a" / "stability.csv").read_bytes() != (tmp_path / "b" / "stability.csv").read_bytes()


def test_console_script(tmp_path):
    cfg = write_config(tmp_path, base_config("solve"))
    res = subprocess.run(
        [sys.executable, "-m", "plaplab.cli", "solve", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True, text=True,
    )
    assert res.returncode == 0, res.stderr
    assert res.stdout.strip() == "PASS converged"
