"""System definitions: vector fields F(x, w), built-ins, and structure checks.

A system is `xdot = F(x, w)` with state x in a domain X (possibly all of
R^n) and disturbance w confined to a finite box W. Components of F are
expression ASTs, so user systems load from JSON configs and the built-in
study systems go through exactly the same pipeline:

* ``abs2d``  -- F = (|x1 - x2|, -x1) on X = R^2, no disturbance.
* ``poly3d`` -- F = (w1*x2^2 - x2 + w2, x3 + 2, x1 - x2 - w1^3) on X = R^3
  with W = [-1/4, 0] x [0, 1/4].

Disturbance-free systems are modeled as m=0 with an empty disturbance box
so they flow through the same code paths.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import ExtendedBox, OrderViolation
from .expr import Expr, ExprError, evaluate, free_vars, parse_expr, to_string

__all__ = [
    "SystemSpec",
    "SystemConfigError",
    "parse_system",
    "system_to_json",
    "eval_field",
    "negate_system",
    "check_special_case",
    "builtin",
    "BUILTIN_NAMES",
]


class SystemConfigError(ValueError):
    """A system config failed validation; the message names the bad field."""


@dataclass(frozen=True, slots=True)
class SystemSpec:
    """Immutable description of one system.

    `closed_form` names a registered closed-form decomposition (built-ins
    only); `user_decomposition` holds optional decomposition expressions
    over x*, w*, xh*, wh* loaded from a config's "decomposition" key.
    """

    name: str
    n: int
    m: int
    domain: ExtendedBox
    disturbance: ExtendedBox
    field: tuple[Expr, ...]
    closed_form: str | None = None
    user_decomposition: tuple[Expr, ...] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise SystemConfigError("n: state dimension must be >= 1")
        if self.m < 0:
            raise SystemConfigError("m: disturbance dimension must be >= 0")
        if self.domain.dim != self.n:
            raise SystemConfigError(f"domain: expected dimension {self.n}, "
                                    f"got {self.domain.dim}")
        if self.disturbance.dim != self.m:
            raise SystemConfigError(f"disturbance: expected dimension {self.m}, "
                                    f"got {self.disturbance.dim}")
        if self.m and not self.disturbance.is_finite():
            raise SystemConfigError("disturbance: box must be finite")
        if np.any(self.domain.lower >= self.domain.upper):
            raise SystemConfigError("domain: must have nonempty interior")
        if len(self.field) != self.n:
            raise SystemConfigError(f"field: expected {self.n} components, "
                                    f"got {len(self.field)}")
        if self.user_decomposition is not None and len(self.user_decomposition) != self.n:
            raise SystemConfigError(f"decomposition: expected {self.n} components, "
                                    f"got {len(self.user_decomposition)}")


def eval_field(sys: SystemSpec, x, w=None, validate: bool = True) -> np.ndarray:
    """F(x, w) componentwise.

    x may be a vector (n,) or a batch (n, N); w likewise ((m,) or (m, N)),
    and may be omitted for disturbance-free systems. Evaluation walks the
    ASTs with numpy broadcasting, independent of the compiled kernels.
    `validate=False` skips the finiteness gate for integrator internals
    that detect blow-up from the result instead.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] != sys.n:
        raise SystemConfigError(f"x: expected {sys.n} components, got {x.shape[0]}")
    if sys.m == 0:
        w = np.empty((0,) + x.shape[1:])
    elif w is None:
        raise SystemConfigError(f"w: system {sys.name!r} needs {sys.m} disturbance components")
    else:
        w = np.asarray(w, dtype=float)
        if w.shape[0] != sys.m:
            raise SystemConfigError(f"w: expected {sys.m} components, got {w.shape[0]}")
    if validate and not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
        raise ValueError("eval_field requires finite x and w")
    env = {("x", i + 1): x[i] for i in range(sys.n)}
    env.update({("w", k + 1): w[k] for k in range(sys.m)})
    rows = [np.asarray(evaluate(c, env), dtype=float) for c in sys.field]
    return np.stack(np.broadcast_arrays(*rows)) if sys.n > 1 else np.asarray(rows)


def negate_system(sys: SystemSpec) -> SystemSpec:
    """The backward-time system xdot = -F(x, w); name gains '-backward'."""
    negated = tuple(Expr("neg", (c,)) for c in sys.field)
    return replace(sys, name=sys.name + "-backward", field=negated,
                   closed_form=None, user_decomposition=None)


def check_special_case(sys: SystemSpec) -> tuple[tuple[bool, ...], bool]:
    """Per component: does F_i avoid its own state variable x_i?

    Purely syntactic occurrence scan; the backward-transform construction
    of under-approximation decompositions requires the overall flag.
    """
    per = tuple(("x", i + 1) not in free_vars(sys.field[i]) for i in range(sys.n))
    return per, all(per)


# --------------------------------------------------------------------------
#   JSON config boundary
# --------------------------------------------------------------------------

def parse_system(config_text: str) -> SystemSpec:
    """Parse the JSON system schema.

    Expected shape (domain may be omitted for X = R^n; disturbance may be
    omitted when m=0):

        {"name": str, "n": int, "m": int,
         "domain": {"lower": [...], "upper": [...]},
         "disturbance": {"lower": [...], "upper": [...]},
         "field": ["expr", ...],
         "decomposition": ["expr", ...]}   -- optional
    """
    try:
        obj = json.loads(config_text)
    except json.JSONDecodeError as e:
        raise SystemConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise SystemConfigError("config must be a JSON object")

    name = obj.get("name")
    if not isinstance(name, str) or not name:
        raise SystemConfigError("name: required nonempty string")
    n, m = obj.get("n"), obj.get("m", 0)
    if not isinstance(n, int) or isinstance(n, bool):
        raise SystemConfigError("n: required integer")
    if not isinstance(m, int) or isinstance(m, bool):
        raise SystemConfigError("m: must be an integer")

    if "domain" in obj:
        domain = _box_field(obj["domain"], "domain")
    else:
        domain = ExtendedBox([-math.inf] * n, [math.inf] * n)
    if "disturbance" in obj:
        dist = _box_field(obj["disturbance"], "disturbance")
    elif m == 0:
        dist = ExtendedBox([], [])
    else:
        raise SystemConfigError("disturbance: required when m > 0")

    raw_field = obj.get("field")
    if not isinstance(raw_field, list):
        raise SystemConfigError("field: required list of expressions")
    field = tuple(_expr_field(t, f"field[{i}]", n, m, allow_hat=False)
                  for i, t in enumerate(raw_field))

    return SystemSpec(name=name, n=n, m=m, domain=domain, disturbance=dist,
                      field=field,
                      user_decomposition=_parse_decomposition(obj, n, m))


def _parse_decomposition(obj: dict, n: int, m: int) -> tuple[Expr, ...] | None:
    if "decomposition" not in obj:
        return None
    raw = obj["decomposition"]
    if not isinstance(raw, list):
        raise SystemConfigError("decomposition: must be a list of expressions")
    return tuple(_expr_field(t, f"decomposition[{i}]", n, m, allow_hat=True)
                 for i, t in enumerate(raw))


def _box_field(raw, where: str) -> ExtendedBox:
    try:
        return ExtendedBox.from_json(raw)
    except (ValueError, TypeError, OrderViolation) as e:
        raise SystemConfigError(f"{where}: {e}") from e


def _expr_field(text, where: str, n: int, m: int, allow_hat: bool) -> Expr:
    if not isinstance(text, str):
        raise SystemConfigError(f"{where}: expected an expression string")
    try:
        return parse_expr(text, n, m, allow_hat=allow_hat)
    except ExprError as e:
        raise SystemConfigError(f"{where}: {e}") from e


def system_to_json(sys: SystemSpec) -> dict:
    """Inverse of parse_system, minus any registered closed form."""
    out = {"name": sys.name, "n": sys.n, "m": sys.m,
           "domain": sys.domain.to_json(),
           "disturbance": sys.disturbance.to_json(),
           "field": [to_string(c) for c in sys.field]}
    if sys.user_decomposition is not None:
        out["decomposition"] = [to_string(c) for c in sys.user_decomposition]
    return out


# --------------------------------------------------------------------------
#   Built-ins
# --------------------------------------------------------------------------

def _make_abs2d() -> SystemSpec:
    n, m = 2, 0
    return SystemSpec(
        name="abs2d", n=n, m=m,
        domain=ExtendedBox([-math.inf] * n, [math.inf] * n),
        disturbance=ExtendedBox([], []),
        field=(parse_expr("abs(x1 - x2)", n, m), parse_expr("-x1", n, m)),
        closed_form="abs2d",
    )


def _make_poly3d() -> SystemSpec:
    n, m = 3, 2
    return SystemSpec(
        name="poly3d", n=n, m=m,
        domain=ExtendedBox([-math.inf] * n, [math.inf] * n),
        disturbance=ExtendedBox([-0.25, 0.0], [0.0, 0.25]),
        field=(parse_expr("w1*x2^2 - x2 + w2", n, m),
               parse_expr("x3 + 2", n, m),
               parse_expr("x1 - x2 - w1^3", n, m)),
        closed_form="poly3d",
    )


_BUILTINS = {"abs2d": _make_abs2d, "poly3d": _make_poly3d}
BUILTIN_NAMES = tuple(sorted(_BUILTINS))


def builtin(name: str) -> SystemSpec:
    """The registered study system for `name` ('abs2d' or 'poly3d')."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise SystemConfigError(
            f"unknown builtin {name!r}; available: {', '.join(BUILTIN_NAMES)}"
        ) from None
    return factory()
