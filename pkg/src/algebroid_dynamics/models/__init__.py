"""Built-in models and the ``.model`` loader.

>>> list_models()
['broken-jacobi', 'canonical-tm', 'sleigh', 'so3-top', 'vac-particle']
>>> spec, con, mech, exprs = load_model("so3-top")
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from ..algebroid import AlgebroidSpec, classify, x_names, xi_names, y_names
from ..constraints import ConstraintSpec, MechanicalHamiltonian, validate_constraint, validate_metric
from ..errors import (
    DimensionMismatch,
    ExprSyntaxError,
    InvariantViolation,
    ModelParseError,
    UnknownVariable,
)
from ..expr import Expr, evaluate, parse
from ..fiber import hamiltonian, lagrangian
from .fileformat import Entry, Leaf, read_entries

__all__ = ["Model", "list_models", "load_model", "parse_model", "model_path"]

_DATA = "data"
_SUFFIX = ".model"

# section -> allowed keys
_SCHEMA = {
    "model": {"name", "base_dim", "rank", "description"},
    "structure": {"rho", "sigma", "c", "sample_box", "class"},
    "dynamics": {"hamiltonian", "lagrangian"},
    "constraints": {"phi", "frame", "linear"},
    "metric": {"ginv", "V"},
    "initial": {"x0", "xi0", "p0", "mu0", "t0", "t1", "dt", "method"},
}

# declared class -> residuals that must vanish
_CLASS_CHECKS = {
    "general": (),
    "skew": ("skew",),
    "almost-lie": ("skew", "almost_lie"),
    "lie": ("skew", "almost_lie", "jacobi"),
}

TOL = 1e-9


@dataclass
class Model:
    name: str
    spec: AlgebroidSpec
    constraint: Optional[ConstraintSpec]
    mechanical: Optional[MechanicalHamiltonian]
    hamiltonian: Optional[Expr]
    lagrangian: Optional[Expr]
    initial: dict
    declared_class: Optional[str]
    report: dict = field(default_factory=dict)
    source: Optional[str] = None
    description: str = ""

    @property
    def exprs(self):
        return {"hamiltonian": self.hamiltonian, "lagrangian": self.lagrangian}

    def __iter__(self):
        return iter((self.spec, self.constraint, self.mechanical, self.exprs))


def list_models():
    root = resources.files(__package__).joinpath(_DATA)
    return sorted(p.name[: -len(_SUFFIX)] for p in root.iterdir() if p.name.endswith(_SUFFIX))


def model_path(name_or_path) -> Path:
    """Path of a built-in (by name) or of a model file on disk."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    if str(name_or_path) in list_models():
        return Path(str(resources.files(__package__).joinpath(_DATA, f"{name_or_path}{_SUFFIX}")))
    raise FileNotFoundError(f"no such model file or built-in model: {name_or_path}")


def load_model(name_or_path) -> Model:
    path = model_path(name_or_path)
    return parse_model(path.read_text(), source=str(path))


# -- semantic pass --------------------------------------------------------------


class _Sections:
    def __init__(self, entries):
        self.values = {}
        self.cells = {}
        self.where = {}
        for e in entries:
            allowed = _SCHEMA.get(e.section)
            if allowed is None:
                raise ModelParseError(f"unknown section [{e.section}]", e.line, 1)
            if e.key not in allowed:
                raise ModelParseError(f"unknown key {e.key!r} in [{e.section}]", e.line, e.column)
            slot = (e.section, e.key)
            if e.index:
                if not isinstance(e.value, Leaf):
                    raise ModelParseError("indexed entries take a single value", e.line, e.column)
                self.cells.setdefault(slot, []).append(e)
            else:
                if slot in self.values:
                    raise ModelParseError(f"duplicate key {e.key!r}", e.line, e.column)
                self.values[slot] = e.value
            self.where.setdefault(slot, (e.line, e.column))

    def has(self, section, key=None):
        if key is None:
            return any(s == section for s, _ in list(self.values) + list(self.cells))
        return (section, key) in self.values or (section, key) in self.cells

    def scalar(self, section, key, default=None):
        v = self.values.get((section, key))
        if v is None:
            return default
        if not isinstance(v, Leaf):
            line, col = self.where[(section, key)]
            raise ModelParseError(f"{key} must be a single value", line, col)
        return v

    def array(self, section, key, shape, fill="0"):
        """Nested list of Leaf with the requested shape, merging whole-array
        and per-cell entries.  Returns None when the key is absent."""
        slot = (section, key)
        if slot not in self.values and slot not in self.cells:
            return None
        line, col = self.where[slot]
        base = self.values.get(slot)
        if base is None:
            base = _filled(shape, Leaf(fill, line, col))
        else:
            _check_shape(base, shape, key, line, col)
            base = _copy(base)
        for e in self.cells.get(slot, ()):
            if len(e.index) != len(shape) or any(i >= s for i, s in zip(e.index, shape)):
                dims = "x".join(map(str, shape)) or "scalar"
                raise DimensionMismatch(
                    f"line {e.line}: index {[i + 1 for i in e.index]} out of range for {key} ({dims})")
            target = base
            for i in e.index[:-1]:
                target = target[i]
            target[e.index[-1]] = e.value
        return base


def _filled(shape, leaf):
    if not shape:
        return leaf
    return [_filled(shape[1:], leaf) for _ in range(shape[0])]


def _copy(value):
    return [_copy(v) for v in value] if isinstance(value, list) else value


def _check_shape(value, shape, key, line, col):
    dims = "x".join(map(str, shape))

    def walk(v, s):
        if not s:
            if isinstance(v, list):
                raise DimensionMismatch(f"line {line}: {key} must be {dims}")
            return
        if not isinstance(v, list) or len(v) != s[0]:
            raise DimensionMismatch(f"line {line}: {key} must be {dims}")
        for item in v:
            walk(item, s[1:])

    walk(value, shape)


def _expr(leaf: Leaf, variables) -> Expr:
    try:
        return parse(leaf.text, variables)
    except ExprSyntaxError as exc:
        raise leaf.error(str(exc), exc.position - 1) from None
    except UnknownVariable as exc:
        raise leaf.error(str(exc), (exc.position or 1) - 1) from None


def _exprs(value, variables):
    if isinstance(value, list):
        return [_exprs(v, variables) for v in value]
    return _expr(value, variables)


def _number(leaf: Leaf) -> float:
    return evaluate(_expr(leaf, ()), {})


def _int(leaf: Leaf, key) -> int:
    try:
        return int(leaf.text)
    except ValueError:
        raise leaf.error(f"{key} must be an integer") from None


def _bool(leaf: Leaf, key) -> bool:
    text = leaf.text.lower()
    if text not in ("true", "false"):
        raise leaf.error(f"{key} must be true or false")
    return text == "true"


def _vector(sec, key, size):
    value = sec.values.get(("initial", key))
    if value is None:
        return None
    if isinstance(value, Leaf):
        value = [value]
    line, col = sec.where[("initial", key)]
    _check_shape(value, (size,), key, line, col)
    return np.array([_number(v) for v in value], dtype=float)


def parse_model(text: str, source=None) -> Model:
    sec = _Sections(read_entries(text))
    for key in ("name", "base_dim", "rank"):
        if not sec.has("model", key):
            raise ModelParseError(f"[model] needs {key!r}", 1, 1)
    name = sec.scalar("model", "name").text
    n = _int(sec.scalar("model", "base_dim"), "base_dim")
    m = _int(sec.scalar("model", "rank"), "rank")
    if n < 0 or m < 1:
        raise DimensionMismatch(f"need base_dim >= 0 and rank >= 1, got {n}, {m}")
    xv, yv, xiv = x_names(n), y_names(m), xi_names(m)

    rho = sec.array("structure", "rho", (n, m))
    sigma = sec.array("structure", "sigma", (n, m))
    c = sec.array("structure", "c", (m, m, m))
    box = sec.array("structure", "sample_box", (n, 2))
    spec = AlgebroidSpec(
        n, m,
        rho=_exprs(rho, xv) if rho is not None else None,
        sigma=_exprs(sigma, xv) if sigma is not None else None,
        c=_exprs(c, xv) if c is not None else None,
        sample_box=[[_number(v) for v in row] for row in box] if box is not None else None,
        name=name,
    )
    declared = sec.scalar("structure", "class")
    if declared is not None and declared.text.lower() not in _CLASS_CHECKS:
        raise declared.error(f"class must be one of {sorted(_CLASS_CHECKS)}")
    declared = declared.text.lower() if declared is not None else None

    H = sec.scalar("dynamics", "hamiltonian")
    L = sec.scalar("dynamics", "lagrangian")
    H = _expr(H, xv + xiv) if H is not None else None
    L = _expr(L, xv + yv) if L is not None else None

    mech = None
    if sec.has("metric"):
        ginv = sec.array("metric", "ginv", (m, m))
        if ginv is None:
            raise ModelParseError("[metric] needs 'ginv'", *sec.where.get(("metric", "V"), (1, 1)))
        V = sec.scalar("metric", "V")
        mech = MechanicalHamiltonian(n, m, _exprs(ginv, xv), _expr(V, xv) if V is not None else "0")

    con = None
    if sec.has("constraints"):
        phi = sec.values.get(("constraints", "phi"), [])
        if isinstance(phi, Leaf):
            phi = [phi]
        if any(isinstance(p, list) for p in phi):
            raise DimensionMismatch("phi must be a flat list of expressions")
        frame = sec.values.get(("constraints", "frame"))
        if frame is not None:
            if not isinstance(frame, list) or len(frame) != m or any(
                    not isinstance(r, list) for r in frame):
                raise DimensionMismatch(f"frame must have {m} rows (one per fibre coordinate)")
            frame = _exprs(frame, xv)
        linear = sec.scalar("constraints", "linear")
        con = ConstraintSpec(n, m, [_expr(p, xv + yv) for p in phi], frame,
                             _bool(linear, "linear") if linear is not None else False)

    initial = {"t0": 0.0, "t1": 1.0, "dt": 1e-3, "method": "rk4"}
    for key in ("t0", "t1", "dt"):
        leaf = sec.scalar("initial", key)
        if leaf is not None:
            initial[key] = _number(leaf)
    method = sec.scalar("initial", "method")
    if method is not None:
        initial["method"] = method.text
    for key, size in (("x0", n), ("xi0", m), ("p0", m), ("mu0", con.r if con else 0)):
        vec = _vector(sec, key, size)
        if vec is not None:
            initial[key] = vec

    model = Model(name, spec, con, mech, H, L, initial, declared, source=source,
                  description=getattr(sec.scalar("model", "description"), "text", ""))
    _validate(model)
    return model


def _validate(model: Model):
    spec = model.spec
    report = classify(spec)
    model.report = report
    if model.declared_class:
        for key in _CLASS_CHECKS[model.declared_class]:
            value = report[key]
            if value is None or value > TOL:
                shown = "undefined" if value is None else f"{value:.3e}"
                raise InvariantViolation(
                    f"declared class {model.declared_class!r} but {key} residual is {shown}")
    if model.mechanical is not None:
        validate_metric(spec, model.mechanical)
        if model.hamiltonian is None:
            model.hamiltonian = model.mechanical.expr
        else:
            _same_function(spec, model.hamiltonian, model.mechanical.expr, "hamiltonian", "metric")
    if model.constraint is not None:
        validate_constraint(spec, model.constraint)
    if model.hamiltonian is not None and model.lagrangian is not None:
        _legendre_consistent(spec, model.hamiltonian, model.lagrangian)


def _fibre_samples(spec, seed=7):
    rng = np.random.default_rng(seed)
    for x in spec.sample_points()[:20]:
        yield x, rng.uniform(-1.0, 1.0, spec.m)


def _same_function(spec, a, b, label_a, label_b):
    fa, fb = hamiltonian(a, spec.n, spec.m), hamiltonian(b, spec.n, spec.m)
    for x, xi in _fibre_samples(spec):
        va, vb = float(fa.jet(x, xi).value), float(fb.jet(x, xi).value)
        if abs(va - vb) > TOL * max(1.0, abs(va)):
            raise InvariantViolation(f"{label_a} disagrees with the {label_b} at x={x.tolist()}")


def _legendre_consistent(spec, H, L):
    """L must be the Legendre transform of H: with y = H_xi, L_y = xi and
    <y, xi> - L = H."""
    Hf, Lf = hamiltonian(H, spec.n, spec.m), lagrangian(L, spec.n, spec.m)
    for x, xi in _fibre_samples(spec):
        hj = Hf.jet(x, xi, order=1)
        lj = Lf.jet(x, hj.dv, order=1)
        scale = max(1.0, float(np.max(np.abs(xi))))
        if (np.max(np.abs(lj.dv - xi)) > TOL * scale
                or abs(hj.dv @ xi - lj.value - hj.value) > TOL * max(1.0, abs(float(hj.value)))):
            raise InvariantViolation(
                f"lagrangian is not the Legendre transform of the hamiltonian at x={x.tolist()}")
