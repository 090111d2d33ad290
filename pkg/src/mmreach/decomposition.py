"""Decomposition functions d(x, w, xh, wh) and their validity checks.

A decomposition function extends F to ordered argument pairs. On the
domain

    T = {(x, w, xh, wh) : x <= xh and w <= wh,  or  xh <= x and wh <= w}

it must agree with F on the diagonal, d(x, w, x, w) = F(x, w), and satisfy
the Kamke-style monotonicity conditions: d_i nondecreasing in x_j (j != i)
and in w, nonincreasing in xh and wh. Three families are provided:

* TightDecomposition -- the componentwise-optimal decomposition

      d_i(x, w, xh, wh) = min { F_i(y, z) : y in [x, xh], y_i = x_i,
                                            z in [w, wh] }

  on the ordered part of T (max over the reversed boxes on the other
  part), computed by box-constrained grid optimization with shrink
  refinement. This is the sharpest decomposition any construction can
  produce, so the reachable-set boxes it induces are the tightest ones
  available from this framework.

* ClosedFormDecomposition -- hand-derived case formulas registered for
  the built-in systems; exact and cheap, used to cross-check the
  optimizer route.

* UserDecomposition -- expressions over x*, w*, xh*, wh* supplied in a
  system config; validity is the user's claim, checked by `check_kamke`
  and `check_condition1`.

`brute_force_decomp_oracle` recomputes the tight values on a dense grid
through the AST evaluator, deliberately sharing no code with the compiled
kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .core import ExtendedBox, OrderViolation
from .expr import (Expr, Program, compile_program, evaluate, free_vars,
                   parse_expr, to_string)
from .systems import SystemSpec, SystemConfigError, check_special_case, eval_field

__all__ = [
    "OptimizerConfig",
    "KEEP_CELLS",
    "ORDER_TOL",
    "DecompositionEvaluator",
    "TightDecomposition",
    "ClosedFormDecomposition",
    "UserDecomposition",
    "BackwardDecomposition",
    "SpecialCaseError",
    "classify_orientation",
    "make_decomposition",
    "tight_decomp_eval",
    "closed_form_decomp",
    "backward_special_case",
    "check_condition1",
    "check_kamke",
    "Condition1Report",
    "KamkeReport",
    "brute_force_decomp_oracle",
    "loose_decomposition",
]

# Ordering comparisons on T allow this much slack so that integrator states
# sitting numerically on the diagonal still classify.
ORDER_TOL = 1e-9

# The optimizer keeps this many best coarse cells as refinement seeds.
KEEP_CELLS = 5


@dataclass(frozen=True, slots=True)
class OptimizerConfig:
    """Grid optimizer settings.

    `grid_points` per non-degenerate axis, at least `refine_iterations`
    shrink rounds per seed (factor `shrink` each), continuing until the
    per-axis grid resolution falls to `tolerance`.
    """

    grid_points: int = 9
    refine_iterations: int = 3
    shrink: float = 0.25
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        if self.refine_iterations < 0:
            raise ValueError("refine_iterations must be >= 0")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")

    def to_json(self) -> dict:
        return {"grid_points": self.grid_points,
                "refine_iterations": self.refine_iterations,
                "shrink": self.shrink,
                "tolerance": self.tolerance}

    @classmethod
    def from_json(cls, obj: dict) -> "OptimizerConfig":
        return cls(**obj)


class SpecialCaseError(ValueError):
    """The backward-transform shortcut needs every F_i free of its own x_i."""


def classify_orientation(x, w, xh, wh, tol: float = ORDER_TOL) -> str:
    """'forward', 'reversed', or 'diagonal'; OrderViolation when unordered."""
    fwd = np.all(x <= xh + tol) and np.all(w <= wh + tol)
    rev = np.all(xh <= x + tol) and np.all(wh <= w + tol)
    if fwd and rev:
        return "diagonal"
    if fwd:
        return "forward"
    if rev:
        return "reversed"
    raise OrderViolation(
        "arguments are not ordered either way, so the point is outside T")


def _flip(orientation: str) -> str:
    return {"forward": "reversed", "reversed": "forward",
            "diagonal": "diagonal"}[orientation]


class DecompositionEvaluator:
    """Base class: argument normalization, T membership, dispatch.

    `__call__` validates that the point lies in T (and inside the system
    domain and disturbance box, up to ORDER_TOL) and short-circuits the
    diagonal to an exact F evaluation. `eval_unchecked` skips all of that
    and takes the orientation explicitly; the embedding integrator uses it
    because each block of the embedding field has a statically known
    orientation and may sit a hair outside T mid-step.
    """

    kind: str = "base"

    def __init__(self, sys: SystemSpec):
        self.sys = sys

    @property
    def value_tolerance(self) -> float:
        """Worst-case evaluation error; zero for exact formula evaluators.

        Numeric evaluators return values accurate only to their search
        resolution, so monotonicity audits should allow this much slack
        on top of their own.
        """
        return 0.0

    def __call__(self, x, w, xh, wh) -> np.ndarray:
        x, w, xh, wh = self._normalize(x, w, xh, wh)
        if not all(np.all(np.isfinite(v)) for v in (x, w, xh, wh)):
            raise ValueError("decomposition arguments must be finite")
        dom, dist = self.sys.domain, self.sys.disturbance
        for p, box, what in ((x, dom, "x"), (xh, dom, "xh"),
                             (w, dist, "w"), (wh, dist, "wh")):
            if p.size and not box.contains(p, tol=ORDER_TOL):
                raise OrderViolation(f"{what} lies outside the system "
                                     f"{'domain' if box is dom else 'disturbance box'}")
        orientation = classify_orientation(x, w, xh, wh)
        if orientation == "diagonal":
            return eval_field(self.sys, x, w if self.sys.m else None)
        return self.eval_unchecked(x, w, xh, wh, orientation)

    def eval_unchecked(self, x, w, xh, wh, orientation: str) -> np.ndarray:
        raise NotImplementedError

    def _normalize(self, x, w, xh, wh):
        n, m = self.sys.n, self.sys.m
        x = np.asarray(x, dtype=float).reshape(-1)
        xh = np.asarray(xh, dtype=float).reshape(-1)
        w = np.asarray([] if w is None else w, dtype=float).reshape(-1)
        wh = np.asarray([] if wh is None else wh, dtype=float).reshape(-1)
        if x.shape != (n,) or xh.shape != (n,):
            raise SystemConfigError(f"x, xh: expected {n} components")
        if w.shape != (m,) or wh.shape != (m,):
            raise SystemConfigError(f"w, wh: expected {m} components")
        return x, w, xh, wh


class TightDecomposition(DecompositionEvaluator):
    """Componentwise extremal decomposition via box-constrained search.

    Component i optimizes F_i over the box [x, xh] with axis i pinned to
    x_i and z in [w, wh]: minimized in the forward orientation, maximized
    in the reversed one. Only variables that actually occur in F_i become
    search axes. The number of shrink rounds is chosen from the box width
    so the final grid resolution reaches the configured tolerance rather
    than stopping after a fixed round count; with the default 1e-6
    tolerance the returned values are accurate well below integrator
    step error.
    """

    kind = "tight"

    def __init__(self, sys: SystemSpec, config: OptimizerConfig | None = None):
        super().__init__(sys)
        self.config = config or OptimizerConfig()
        n, m = sys.n, sys.m
        self._programs: list[Program] = [compile_program(c, n, m) for c in sys.field]
        self._free_slots: list[np.ndarray] = []
        self._free_srcs: list[list[tuple[str, int]]] = []
        for i, comp in enumerate(sys.field):
            used = free_vars(comp)
            srcs = [("x", j) for j in range(n) if j != i and ("x", j + 1) in used]
            srcs += [("w", k) for k in range(m) if ("w", k + 1) in used]
            slots = [Program.slot_of(kind, idx + 1, n, m) for kind, idx in srcs]
            self._free_slots.append(np.asarray(slots, dtype=np.int64))
            self._free_srcs.append(srcs)

    @property
    def value_tolerance(self) -> float:
        # Grid resolution reaches config.tolerance; the value error is
        # that times the field's local slope.
        return self.config.tolerance

    def eval_unchecked(self, x, w, xh, wh, orientation: str) -> np.ndarray:
        x, w, xh, wh = self._normalize(x, w, xh, wh)
        n, m = self.sys.n, self.sys.m
        cfg = self.config
        maximize = orientation == "reversed"
        template = np.zeros(2 * (n + m))
        template[:n] = x
        template[n:n + m] = w
        out = np.empty(n)
        for i, prog in enumerate(self._programs):
            srcs = self._free_srcs[i]
            lo = np.empty(len(srcs))
            hi = np.empty(len(srcs))
            for j, (kind, idx) in enumerate(srcs):
                a, b = (x[idx], xh[idx]) if kind == "x" else (w[idx], wh[idx])
                lo[j], hi[j] = (a, b) if a <= b else (b, a)
            out[i] = _backend.box_extremum(
                prog.ops, prog.iargs, prog.consts, prog.stack_need,
                template, self._free_slots[i], lo, hi,
                cfg.grid_points, KEEP_CELLS, cfg.shrink,
                self._rounds(lo, hi), cfg.tolerance, maximize)
        return out

    def _rounds(self, lo: np.ndarray, hi: np.ndarray) -> int:
        """Shrink rounds needed to reach `tolerance` grid resolution."""
        cfg = self.config
        width = float(np.max(hi - lo, initial=0.0))
        target = (cfg.grid_points - 1) * cfg.tolerance
        if width <= target:
            return cfg.refine_iterations
        needed = math.ceil(math.log(target / width) / math.log(cfg.shrink))
        return min(60, max(cfg.refine_iterations, needed))


# --------------------------------------------------------------------------
#   Closed forms for the built-ins
# --------------------------------------------------------------------------

def _closed_abs2d(x, w, xh, wh) -> np.ndarray:
    # Component 1 is the extremum of |x1 - y2| over y2 between x2 and xh2;
    # the chain covers both orientations and reduces to |x1 - x2| on the
    # diagonal. Component 2 is linear, so the extremum sits at xh1.
    x1, x2 = x
    xh1, xh2 = xh
    if x2 <= x1 <= xh2:
        d1 = 0.0
    elif 2.0 * x1 <= min(2.0 * x2, x2 + xh2):
        d1 = x2 - x1
    else:
        d1 = x1 - xh2
    return np.array([d1, -xh1])


def _closed_poly3d(x, w, xh, wh) -> np.ndarray:
    # Component 1 is the extremum of the parabola w1*y2^2 - y2 + w2 over
    # y2 between x2 and xh2 (vertex at y2 = 1/(2 w1) when w1 < 0); the
    # case split on w1*x2, w1*xh2 against 1/2 and on their sum against 1
    # is total for every real input and both orientations. Components 2
    # and 3 are monotone, so the extrema sit at box corners.
    x1, x2, _x3 = x
    xh1, xh2, _xh3 = xh
    w1, w2 = w
    if w1 * x2 <= 0.5 <= w1 * xh2:
        d1 = -1.0 / (4.0 * w1) + w2
    elif (0.5 <= w1 * x2 <= w1 * xh2) or (1.0 <= w1 * (x2 + xh2)):
        d1 = w1 * x2 ** 2 - x2 + w2
    else:
        d1 = w1 * xh2 ** 2 - xh2 + w2
    return np.array([d1, x[2] + 2.0, x1 - xh2 - wh[0] ** 3])


_CLOSED_FORMS = {"abs2d": _closed_abs2d, "poly3d": _closed_poly3d}


class ClosedFormDecomposition(DecompositionEvaluator):
    """Registered hand-derived decomposition for a built-in system."""

    kind = "closed"

    def __init__(self, sys: SystemSpec):
        super().__init__(sys)
        if sys.closed_form is None:
            raise SystemConfigError(
                f"system {sys.name!r} has no registered closed-form decomposition")
        self._fn = _CLOSED_FORMS[sys.closed_form]

    def eval_unchecked(self, x, w, xh, wh, orientation: str) -> np.ndarray:
        x, w, xh, wh = self._normalize(x, w, xh, wh)
        return self._fn(x, w, xh, wh)


class UserDecomposition(DecompositionEvaluator):
    """Decomposition given as expressions over x*, w*, xh*, wh*."""

    kind = "user"

    def __init__(self, sys: SystemSpec, exprs: tuple[Expr, ...] | None = None):
        super().__init__(sys)
        if exprs is None:
            exprs = sys.user_decomposition
        if exprs is None:
            raise SystemConfigError(
                f"system {sys.name!r} carries no user decomposition")
        if len(exprs) != sys.n:
            raise SystemConfigError(
                f"decomposition: expected {sys.n} components, got {len(exprs)}")
        self.exprs = tuple(exprs)

    def eval_unchecked(self, x, w, xh, wh, orientation: str) -> np.ndarray:
        x, w, xh, wh = self._normalize(x, w, xh, wh)
        env = {}
        for i in range(self.sys.n):
            env[("x", i + 1)] = x[i]
            env[("xh", i + 1)] = xh[i]
        for k in range(self.sys.m):
            env[("w", k + 1)] = w[k]
            env[("wh", k + 1)] = wh[k]
        return np.array([float(evaluate(c, env)) for c in self.exprs])


class BackwardDecomposition(DecompositionEvaluator):
    """Decomposition of -F obtained by negating and swapping a base one.

    When every F_i is free of its own x_i, D(x, w, xh, wh) =
    -d(xh, wh, x, w) decomposes -F, which is what drives the
    under-approximation flow. The pinning that `d` applies to argument i
    is immaterial exactly because F_i does not depend on x_i.
    """

    kind = "backward"

    def __init__(self, base: DecompositionEvaluator, force: bool = False):
        super().__init__(base.sys)
        if not force and not check_special_case(base.sys)[1]:
            bad = [i + 1 for i, ok in enumerate(check_special_case(base.sys)[0])
                   if not ok]
            raise SpecialCaseError(
                f"system {base.sys.name!r}: components {bad} depend on their "
                "own state variable, so the negate-and-swap construction does "
                "not apply (pass force=True to override)")
        self.base = base

    @property
    def value_tolerance(self) -> float:
        return self.base.value_tolerance

    def __call__(self, x, w, xh, wh) -> np.ndarray:
        x, w, xh, wh = self._normalize(x, w, xh, wh)
        if not all(np.all(np.isfinite(v)) for v in (x, w, xh, wh)):
            raise ValueError("decomposition arguments must be finite")
        orientation = classify_orientation(x, w, xh, wh)
        return self.eval_unchecked(x, w, xh, wh, orientation)

    def eval_unchecked(self, x, w, xh, wh, orientation: str) -> np.ndarray:
        return -self.base.eval_unchecked(xh, wh, x, w, _flip(orientation))


# --------------------------------------------------------------------------
#   Construction helpers
# --------------------------------------------------------------------------

def make_decomposition(sys: SystemSpec, kind: str = "tight",
                       config: OptimizerConfig | None = None) -> DecompositionEvaluator:
    """Build a decomposition evaluator by kind: tight, closed, or user."""
    if kind == "tight":
        return TightDecomposition(sys, config)
    if kind == "closed":
        return ClosedFormDecomposition(sys)
    if kind == "user":
        return UserDecomposition(sys)
    raise SystemConfigError(f"unknown decomposition kind {kind!r}")


def tight_decomp_eval(sys: SystemSpec, x, w, xh, wh,
                      config: OptimizerConfig | None = None) -> np.ndarray:
    """One-shot tight decomposition evaluation (validates T membership)."""
    return TightDecomposition(sys, config)(x, w, xh, wh)


def closed_form_decomp(sys: SystemSpec) -> ClosedFormDecomposition:
    """The registered closed-form decomposition for a built-in system."""
    return ClosedFormDecomposition(sys)


def backward_special_case(base: DecompositionEvaluator,
                          force: bool = False) -> BackwardDecomposition:
    """Negate-and-swap a decomposition of F into one of -F (see class)."""
    return BackwardDecomposition(base, force=force)


# --------------------------------------------------------------------------
#   Validity checks
# --------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Condition1Report:
    ok: bool
    checked: int
    max_error: float


@dataclass(frozen=True, slots=True)
class KamkeReport:
    ok: bool
    checked: int
    violations: int
    worst: float


def check_condition1(decomp: DecompositionEvaluator, xbox: ExtendedBox,
                     samples: int = 200, seed: int = 0,
                     tol: float = 1e-8) -> Condition1Report:
    """d(x, w, x, w) == F(x, w) on random diagonal points of xbox x W.

    Evaluates through `eval_unchecked` so the diagonal shortcut in
    `__call__` cannot mask a broken formula.
    """
    sys = decomp.sys
    xbox.require_finite("condition-1 sample box")
    rng = np.random.default_rng(seed)
    xs = xbox.sample(rng, samples)
    ws = sys.disturbance.sample(rng, samples) if sys.m else np.empty((0, samples))
    worst = 0.0
    for t in range(samples):
        x, w = xs[:, t], ws[:, t]
        d = decomp.eval_unchecked(x, w, x, w, "forward")
        f = eval_field(sys, x, w if sys.m else None)
        worst = max(worst, float(np.max(np.abs(d - f))))
    return Condition1Report(ok=worst <= tol, checked=samples, max_error=worst)


def check_kamke(decomp: DecompositionEvaluator, xbox: ExtendedBox,
                samples: int = 200, seed: int = 0,
                slack: float = 1e-9) -> KamkeReport:
    """Sampled monotonicity audit of a decomposition on T.

    For random ordered tuples in both orientations it checks that each
    d_i is nondecreasing when the first block moves toward the second
    with component i pinned (and w increases within the tuple's range),
    and nonincreasing when the second block moves further out. Violations
    beyond `slack` are counted; `worst` is the largest excess seen.
    """
    sys = decomp.sys
    xbox.require_finite("Kamke sample box")
    rng = np.random.default_rng(seed)
    n, m = sys.n, sys.m
    wlo = sys.disturbance.lower if m else np.empty(0)
    whi = sys.disturbance.upper if m else np.empty(0)
    checked = violations = 0
    worst = 0.0

    def draw_pair():
        p = xbox.sample(rng, 2)
        a, b = np.minimum(p[:, 0], p[:, 1]), np.maximum(p[:, 0], p[:, 1])
        if m:
            q = sys.disturbance.sample(rng, 2)
            c, d = np.minimum(q[:, 0], q[:, 1]), np.maximum(q[:, 0], q[:, 1])
        else:
            c = d = np.empty(0)
        return a, c, b, d

    for trial in range(samples):
        lo_x, lo_w, hi_x, hi_w = draw_pair()
        reversed_case = trial % 2 == 1
        if reversed_case:
            x, w, xh, wh = hi_x, hi_w, lo_x, lo_w
            orientation = "reversed"
        else:
            x, w, xh, wh = lo_x, lo_w, hi_x, hi_w
            orientation = "forward"
        d0 = decomp.eval_unchecked(x, w, xh, wh, orientation)

        # First block moves up (toward xh when forward, away when reversed),
        # with component i pinned; w moves up within its admissible range.
        v = w + rng.uniform(0.0, 1.0, m) * ((whi if reversed_case else wh) - w)
        if reversed_case:
            step = rng.uniform(0.0, 0.5, n) * np.maximum(xbox.width(), 1.0)
        else:
            step = rng.uniform(0.0, 1.0, n) * (xh - x)
        for i in range(n):
            y = np.minimum(x + step, sys.domain.upper)
            y[i] = x[i]
            di = decomp.eval_unchecked(y, v, xh, wh, orientation)[i]
            checked += 1
            gap = d0[i] - di - slack
            if gap > 0.0:
                violations += 1
                worst = max(worst, float(gap))

        # Second block moves up; d must not increase in any component.
        vh = wh + rng.uniform(0.0, 1.0, m) * ((w if reversed_case else whi) - wh)
        if reversed_case:
            yh = xh + rng.uniform(0.0, 1.0, n) * (x - xh)
        else:
            yh = np.minimum(xh + rng.uniform(0.0, 0.5, n)
                            * np.maximum(xbox.width(), 1.0), sys.domain.upper)
        d2 = decomp.eval_unchecked(x, w, yh, vh, orientation)
        checked += n
        over = d2 - d0 - slack
        bad = over > 0.0
        violations += int(np.count_nonzero(bad))
        if np.any(bad):
            worst = max(worst, float(np.max(over[bad])))

    return KamkeReport(ok=violations == 0, checked=checked,
                       violations=violations, worst=worst)


# --------------------------------------------------------------------------
#   Dense-grid oracle
# --------------------------------------------------------------------------

# Chunk the first grid axis so one block stays a few megabytes.
_ORACLE_BLOCK = 1 << 21


def brute_force_decomp_oracle(sys: SystemSpec, x, w, xh, wh,
                              points: int = 201) -> np.ndarray:
    """Tight decomposition values recomputed on a dense product grid.

    Walks each component's AST with numpy broadcasting over `points`
    samples per occurring axis; axes the component never reads are pinned,
    so only the relevant product grid materializes. Shares no code with
    the compiled kernels and serves as their accuracy reference.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    xh = np.asarray(xh, dtype=float).reshape(-1)
    w = np.asarray([] if w is None else w, dtype=float).reshape(-1)
    wh = np.asarray([] if wh is None else wh, dtype=float).reshape(-1)
    orientation = classify_orientation(x, w, xh, wh)
    if orientation == "diagonal":
        return eval_field(sys, x, w if sys.m else None)
    maximize = orientation == "reversed"
    n, m = sys.n, sys.m
    out = np.empty(n)
    for i, comp in enumerate(sys.field):
        used = free_vars(comp)
        axes = [("x", j) for j in range(n) if j != i and ("x", j + 1) in used]
        axes += [("w", k) for k in range(m) if ("w", k + 1) in used]
        env = {("x", j + 1): x[j] for j in range(n)}
        env.update({("w", k + 1): w[k] for k in range(m)})
        k_free = len(axes)
        for a, (kind, idx) in enumerate(axes):
            p, q = (x[idx], xh[idx]) if kind == "x" else (w[idx], wh[idx])
            lo, hi = (p, q) if p <= q else (q, p)
            shape = [1] * k_free
            shape[a] = points
            env[(kind, idx + 1)] = np.linspace(lo, hi, points).reshape(shape)
        if k_free == 0:
            out[i] = float(evaluate(comp, env))
            continue
        per_block = max(1, _ORACLE_BLOCK // points ** (k_free - 1))
        first = env[axes[0][0], axes[0][1] + 1]
        best = -math.inf if maximize else math.inf
        for start in range(0, points, per_block):
            env[axes[0][0], axes[0][1] + 1] = first[start:start + per_block]
            vals = evaluate(comp, env)
            ext = float(np.max(vals) if maximize else np.min(vals))
            best = max(best, ext) if maximize else min(best, ext)
        out[i] = best
    return out


# --------------------------------------------------------------------------
#   Looser comparison decomposition
# --------------------------------------------------------------------------

# A valid but non-tight decomposition for abs2d, kept for benchmarks and
# as a positive Kamke specimen whose reach boxes the tight one must beat.
_LOOSE_FORMS = {"abs2d": ("max(x1 - xh2, x2 - x1)",
                          "-xh1 - 0.5*(xh2 - x2)")}


def loose_decomposition(sys: SystemSpec) -> UserDecomposition:
    """A deliberately conservative valid decomposition, where registered."""
    try:
        texts = _LOOSE_FORMS[sys.name]
    except KeyError:
        raise SystemConfigError(
            f"no loose comparison decomposition registered for {sys.name!r}"
        ) from None
    exprs = tuple(parse_expr(t, sys.n, sys.m, allow_hat=True) for t in texts)
    return UserDecomposition(sys, exprs)


def negative_control_decomposition(sys: SystemSpec) -> UserDecomposition:
    """A deliberately broken evaluator for auditing the checkers.

    Reuses the field expressions verbatim, so the hatted arguments are
    ignored entirely. The diagonal identity still holds, which makes this
    a useful probe: any monotonicity checker that passes it is not
    checking anything.
    """
    exprs = tuple(parse_expr(to_string(c), sys.n, sys.m, allow_hat=True)
                  for c in sys.field)
    return UserDecomposition(sys, exprs)
