"""Experiment configuration: a single JSON document.

Example::

    {
      "kind": "mono",
      "mesh": {"rect": [[0, 1], [0, 1]], "n": 16},
      "p": 2,
      "sigma1": "1 + chi(0.375, 0.625, 0.375, 0.625)",
      "sigma2": "1",
      "dictionary": {"linear": ["x1"], "bumps": 0},
      "tolerances": {"invariant": 1e-6},
      "seed": 0
    }

Coefficients are expression strings (see :mod:`plaplab.expr`), numbers, or
``{"file": path}`` pointing at a field file. ``A`` is either null (identity)
or a 2x2 nested list of such entries.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from plaplab.errors import InvalidArgument
from plaplab.expr import Expression, parse_expression
from plaplab.geometry import Mesh, build_structured_mesh, read_field, read_mesh

__all__ = ["KINDS", "ConfigError", "ExperimentConfig", "load_config", "parse_config"]

KINDS = ("solve", "dn", "mono", "detect", "perturb", "ucp", "calibrate-eps")

_TOP = {
    "kind", "mesh", "p", "sigma", "sigma1", "sigma2", "A", "f", "dictionary",
    "tolerances", "output", "seed", "threads", "options",
}
_LINEAR = {"x1": "x1", "x2": "x2", "x1+x2": "x1 + x2", "x1-x2": "x1 - x2"}
_OPTIONS = {
    "solve": {"expect_energy"},
    "dn": set(),
    "mono": {"assert_ordering", "gap_tol"},
    "detect": {"quantile", "method", "min_jaccard", "gap_tol"},
    "perturb": {"eps_ladder", "direction", "calibrate", "calibration_ladder", "calibration_tests"},
    "ucp": {"plateau_threshold", "flag_fraction", "zero_threshold"},
    "calibrate-eps": {"ladder", "tests"},
}


class ConfigError(InvalidArgument):
    """Configuration problem; the message names the JSON line or field."""


def _err(path: str, msg: str):
    raise ConfigError(f"config field {path!r}: {msg}")


@dataclass(frozen=True)
class CoefficientSpec:
    """A scalar coefficient given as an expression or a field file."""

    expression: Expression | None = None
    file: str | None = None

    @classmethod
    def parse(cls, value, path: str, base: Path) -> "CoefficientSpec":
        if isinstance(value, bool):
            _err(path, "expected a number, expression string or {\"file\": path}")
        if isinstance(value, (int, float)):
            value = repr(float(value))
        if isinstance(value, str):
            try:
                return cls(expression=parse_expression(value))
            except InvalidArgument as exc:
                _err(path, str(exc))
        if isinstance(value, dict) and set(value) == {"file"} and isinstance(value["file"], str):
            return cls(file=str((base / value["file"]).resolve()))
        _err(path, "expected a number, expression string or {\"file\": path}")

    def cells(self, mesh: Mesh) -> np.ndarray:
        if self.expression is not None:
            return self.expression.at_cells(mesh)
        values, kind, location = read_field(self.file)
        if kind != "scalar":
            raise InvalidArgument(f"{self.file}: expected a scalar field, got {kind}")
        values = values.ravel()
        if location == "vertex":
            return values[mesh.triangles].mean(axis=1)
        return values

    def vertices(self, mesh: Mesh) -> np.ndarray | None:
        """Vertex samples when available without loss, else None."""
        if self.expression is not None:
            return self.expression.at_vertices(mesh)
        values, kind, location = read_field(self.file)
        return values.ravel() if kind == "scalar" and location == "vertex" else None


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    kind: str
    raw: dict = field(repr=False)
    mesh: dict
    p: float
    coefficients: dict = field(repr=False)
    A: object = field(repr=False)
    f: Expression
    dictionary: dict
    tolerances: dict
    output: str | None
    seed: int
    threads: int
    options: dict
    base_dir: Path = field(default=Path("."), repr=False)

    @property
    def config_hash(self) -> str:
        """sha256 of the canonical JSON config; the output location is left out."""
        body = {k: v for k, v in self.raw.items() if k != "output"}
        canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def build_mesh(self) -> Mesh:
        if "file" in self.mesh:
            return read_mesh(self.mesh["file"])
        return build_structured_mesh(self.mesh["rect"], self.mesh["n"])

    def matrix(self, mesh: Mesh) -> np.ndarray | None:
        if self.A is None:
            return None
        if isinstance(self.A, CoefficientSpec):
            values, kind, location = read_field(self.A.file)
            if kind != "matrix" or location != "cell" or len(values) != mesh.n_cells:
                raise InvalidArgument(f"{self.A.file}: expected a cell matrix field")
            return values
        else:
            a11, a12, a21, a22 = (e.cells(mesh) for e in self.A)
            if not np.allclose(a12, a21, rtol=1e-14, atol=0.0):
                raise InvalidArgument("A is not symmetric")
        return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], axis=1)


def _number(value, path, lo=None, hi=None, integer=False, lo_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _err(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        _err(path, f"expected an integer, got {value!r}")
    if lo is not None and (value <= lo if lo_open else value < lo):
        _err(path, f"must be {'>' if lo_open else '>='} {lo}, got {value!r}")
    if hi is not None and value > hi:
        _err(path, f"must be <= {hi}, got {value!r}")
    return int(value) if integer else float(value)


def _mesh_spec(value, base: Path) -> dict:
    if value is None:
        return {"rect": ((0.0, 1.0), (0.0, 1.0)), "n": 16}
    if not isinstance(value, dict):
        _err("mesh", "expected an object")
    if "file" in value:
        if set(value) != {"file"} or not isinstance(value["file"], str):
            _err("mesh", "a mesh file spec takes only 'file'")
        return {"file": str((base / value["file"]).resolve())}
    extra = set(value) - {"rect", "n"}
    if extra:
        _err(f"mesh.{sorted(extra)[0]}", "unknown field")
    n = _number(value.get("n", 16), "mesh.n", lo=1, integer=True)
    rect = value.get("rect", [[0, 1], [0, 1]])
    try:
        (a, b), (c, d) = rect
        rect = ((float(a), float(b)), (float(c), float(d)))
    except (TypeError, ValueError):
        _err("mesh.rect", "expected [[x0, x1], [y0, y1]]")
    if not (rect[0][0] < rect[0][1] and rect[1][0] < rect[1][1]):
        _err("mesh.rect", "empty rectangle")
    return {"rect": rect, "n": n}


def _dictionary_spec(value) -> dict:
    value = {} if value is None else value
    if not isinstance(value, dict):
        _err("dictionary", "expected an object")
    extra = set(value) - {"linear", "expressions", "bumps", "width"}
    if extra:
        _err(f"dictionary.{sorted(extra)[0]}", "unknown field")
    linear = value.get("linear", True)
    if linear is True:
        linear = list(_LINEAR)
    elif linear is False:
        linear = []
    elif not isinstance(linear, list) or any(k not in _LINEAR for k in linear):
        _err("dictionary.linear", f"expected true, false or a subset of {list(_LINEAR)}")
    exprs = value.get("expressions", {})
    if not isinstance(exprs, dict):
        _err("dictionary.expressions", "expected an object of label: expression")
    parsed = []
    for label, s in exprs.items():
        if not isinstance(s, str):
            _err(f"dictionary.expressions.{label}", "expected an expression string")
        try:
            parsed.append((label, parse_expression(s)))
        except InvalidArgument as exc:
            _err(f"dictionary.expressions.{label}", str(exc))
    bumps = _number(value.get("bumps", 8), "dictionary.bumps", lo=0, integer=True)
    width = value.get("width")
    if width is not None:
        width = _number(width, "dictionary.width", lo=0.0, lo_open=True)
    linear_parsed = [(k, parse_expression(_LINEAR[k])) for k in linear]
    if not linear_parsed and not parsed and bumps == 0:
        _err("dictionary", "dictionary is empty")
    return {"entries": linear_parsed + parsed, "bumps": bumps, "width": width}


def parse_config(raw: dict, kind: str | None = None, base_dir: Path | str = ".") -> ExperimentConfig:
    """Validate a decoded config; ``kind`` (from the subcommand) must agree with the file."""
    base = Path(base_dir)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    extra = set(raw) - _TOP
    if extra:
        _err(sorted(extra)[0], "unknown field")
    if kind is not None:
        if raw.get("kind", kind) != kind:
            _err("kind", f"config says {raw['kind']!r} but the subcommand is {kind!r}")
        raw["kind"] = kind
    k = raw.get("kind")
    if k not in KINDS:
        _err("kind", f"expected one of {list(KINDS)}, got {k!r}")

    p = _number(raw.get("p", 2.0), "p", lo=1.0, lo_open=True)
    if not np.isfinite(p):
        _err("p", "must be finite")
    coeffs = {}
    if k in ("mono", "detect"):
        for name in ("sigma1", "sigma2"):
            if name not in raw:
                _err(name, f"required for kind {k!r}")
            coeffs[name] = CoefficientSpec.parse(raw[name], name, base)
    else:
        coeffs["sigma"] = CoefficientSpec.parse(raw.get("sigma", 1.0), "sigma", base)

    A = raw.get("A")
    if A is not None:
        if isinstance(A, dict):
            A = CoefficientSpec.parse(A, "A", base)
            if A.file is None:
                _err("A", "expected null, a 2x2 list or {\"file\": path}")
        elif isinstance(A, list) and len(A) == 2 and all(isinstance(r, list) and len(r) == 2 for r in A):
            A = tuple(CoefficientSpec.parse(A[i][j], f"A[{i}][{j}]", base) for i in (0, 1) for j in (0, 1))
        else:
            _err("A", "expected null, a 2x2 list or {\"file\": path}")
        if k == "ucp":
            _err("A", "the ucp experiment is defined for A = I only")

    f = raw.get("f", "x1")
    if not isinstance(f, str):
        _err("f", "expected an expression string")
    try:
        f = parse_expression(f)
    except InvalidArgument as exc:
        _err("f", str(exc))

    tol = raw.get("tolerances", {}) or {}
    if not isinstance(tol, dict) or set(tol) - {"solver", "invariant"}:
        _err("tolerances", "expected an object with 'solver' and/or 'invariant'")
    tolerances = {
        "solver": None if tol.get("solver") is None else _number(tol["solver"], "tolerances.solver", lo=0.0, lo_open=True),
        "invariant": _number(tol.get("invariant", 1e-6), "tolerances.invariant", lo=0.0, lo_open=True),
    }

    options = raw.get("options", {}) or {}
    if not isinstance(options, dict):
        _err("options", "expected an object")
    extra = set(options) - _OPTIONS[k]
    if extra:
        _err(f"options.{sorted(extra)[0]}", f"not an option of kind {k!r}")
    options = _check_options(k, options, base)

    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        _err("output", "expected a path string")
    seed = _number(raw.get("seed", 0), "seed", lo=0, integer=True)
    threads = _number(raw.get("threads", 1), "threads", lo=1, integer=True)
    return ExperimentConfig(
        kind=k,
        raw=raw,
        mesh=_mesh_spec(raw.get("mesh"), base),
        p=p,
        coefficients=coeffs,
        A=A,
        f=f,
        dictionary=_dictionary_spec(raw.get("dictionary")),
        tolerances=tolerances,
        output=None if output is None else str(base / output),
        seed=seed,
        threads=threads,
        options=options,
        base_dir=base,
    )


def _ladder(value, path, hi=None):
    if not isinstance(value, list) or not value:
        _err(path, "expected a non-empty list of numbers")
    return tuple(_number(v, f"{path}[{i}]", lo=0.0, lo_open=True, hi=hi) for i, v in enumerate(value))


def _check_options(kind, o, base):
    out = dict(o)
    if "expect_energy" in o:
        out["expect_energy"] = _number(o["expect_energy"], "options.expect_energy")
    if "assert_ordering" in o and not isinstance(o["assert_ordering"], bool):
        _err("options.assert_ordering", "expected true or false")
    if "gap_tol" in o:
        out["gap_tol"] = _number(o["gap_tol"], "options.gap_tol", lo=0.0)
    if "quantile" in o:
        out["quantile"] = _number(o["quantile"], "options.quantile", lo=0.0, hi=0.999999)
    if "method" in o and o["method"] not in ("monotonicity", "energy_share"):
        _err("options.method", "expected 'monotonicity' or 'energy_share'")
    if "min_jaccard" in o and o["min_jaccard"] is not None:
        out["min_jaccard"] = _number(o["min_jaccard"], "options.min_jaccard", lo=0.0, hi=1.0)
    for key in ("eps_ladder", "calibration_ladder", "ladder"):
        if key in o:
            out[key] = _ladder(o[key], f"options.{key}")
    for key in ("calibration_tests", "tests"):
        if key in o:
            out[key] = _number(o[key], f"options.{key}", lo=1, integer=True)
    if "calibrate" in o and not isinstance(o["calibrate"], bool):
        _err("options.calibrate", "expected true or false")
    if "direction" in o and o["direction"] is not None:
        d = o["direction"]
        if not isinstance(d, dict) or set(d) - {"sigma", "A"}:
            _err("options.direction", "expected {\"sigma\": ..., \"A\": [[..,..],[..,..]]}")
        ds = None if d.get("sigma") is None else CoefficientSpec.parse(d["sigma"], "options.direction.sigma", base)
        dA = d.get("A")
        if dA is not None:
            if not (isinstance(dA, list) and len(dA) == 2 and all(isinstance(r, list) and len(r) == 2 for r in dA)):
                _err("options.direction.A", "expected a 2x2 list")
            dA = tuple(
                CoefficientSpec.parse(dA[i][j], f"options.direction.A[{i}][{j}]", base) for i in (0, 1) for j in (0, 1)
            )
        out["direction"] = (ds, dA)
    for key in ("plateau_threshold", "zero_threshold"):
        if key in o and o[key] is not None:
            out[key] = _number(o[key], f"options.{key}", lo=0.0, lo_open=True)
    if "flag_fraction" in o:
        out["flag_fraction"] = _number(o["flag_fraction"], "options.flag_fraction", lo=0.0, hi=1.0)
    return out


def load_config(path, kind: str | None = None) -> ExperimentConfig:
    """Read and validate a JSON config; JSON syntax errors report line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(raw, kind=kind, base_dir=path.parent)
