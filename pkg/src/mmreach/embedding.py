"""Embedding dynamics: doubled-state fields, integration, reach boxes.

A decomposition d of F induces the embedding dynamics on pairs
(x, xhat) with the disturbance pinned at the box endpoints:

    (xdot, xhatdot) = e(x, xhat) = (d(x, wlo, xhat, whi),
                                    d(xhat, whi, x, wlo))

Flowing X0's corner pair (X0.lower, X0.upper) forward for time T yields a
box [x(T), xhat(T)] that contains every trajectory of the original system,
whatever the disturbance signal does inside W. The companion field

    Gamma(x, xhat) = (-D(x, wlo, xhat, whi), -D(xhat, whi, x, wlo)),

built from a decomposition D of the backward system -F, flows the same
corner pair into a box contained in the reachable set, valid while the
pair stays ordered (inside T_X).

Integration is fixed-step classical Runge-Kutta; early exit from the
domain, order violation, and numeric overflow are reported as statuses
rather than exceptions so callers can decide.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import EmbeddingState, ExtendedBox, OrderViolation, rect
from .decomposition import DecompositionEvaluator
from .systems import SystemSpec

__all__ = [
    "IntegratorConfig",
    "ReachResult",
    "SEMonotonicityReport",
    "embedding_field",
    "gamma_field",
    "make_embedding_field",
    "make_gamma_field",
    "integrate",
    "over_approximate",
    "under_approximate",
    "check_se_monotonicity",
]

# Componentwise order violations smaller than this are treated as rounding.
TX_TOL = 1e-9

# An order violation must persist this many consecutive accepted steps
# before the run is declared to have left T_X; degenerate initial faces
# sit exactly on the boundary and jitter across it for one step.
TX_PERSISTENCE = 2

# At most this many trajectory states are retained per run.
MAX_TRAJECTORY = 1000


@dataclass(frozen=True, slots=True)
class IntegratorConfig:
    """Fixed-step integrator settings; `method` is classical RK4."""

    step: float = 1e-3
    method: str = "rk4"
    max_time: float = 100.0

    def __post_init__(self):
        if self.step <= 0.0:
            raise ValueError("step must be positive")
        if self.method != "rk4":
            raise ValueError(f"unsupported method {self.method!r}; only 'rk4'")
        if self.step > self.max_time:
            raise ValueError("step must not exceed max_time")

    def to_json(self) -> dict:
        return {"step": self.step, "method": self.method,
                "max_time": self.max_time}

    @classmethod
    def from_json(cls, obj: dict) -> "IntegratorConfig":
        return cls(**obj)


@dataclass(frozen=True, slots=True)
class ReachResult:
    """Outcome of one embedding integration.

    `box` is present only for status 'ok' (the rectangle spanned by the
    final pair); early exits report `exit_time` instead. The trajectory
    holds up to MAX_TRAJECTORY sampled (t, state) points including the
    initial and final ones.
    """

    status: str
    box: ExtendedBox | None
    exit_time: float | None
    trajectory: tuple[tuple[float, EmbeddingState], ...] = dc_field(default=())

    def __post_init__(self):
        if self.status not in ("ok", "left_domain", "left_TX", "nonfinite"):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == "ok" and self.box is None:
            raise ValueError("status 'ok' requires a box")
        if self.status != "ok" and self.box is not None:
            raise ValueError(f"status {self.status!r} must not carry a box")

    @property
    def final_state(self) -> EmbeddingState:
        return self.trajectory[-1][1]

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "box": None if self.box is None else self.box.to_json(),
            "exit_time": self.exit_time,
            "trajectory": [{"t": t, "x": list(s.x), "xhat": list(s.xhat)}
                           for t, s in self.trajectory],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReachResult":
        box = None if obj.get("box") is None else ExtendedBox.from_json(obj["box"])
        traj = tuple((float(p["t"]), EmbeddingState(p["x"], p["xhat"]))
                     for p in obj.get("trajectory", ()))
        return cls(status=obj["status"], box=box,
                   exit_time=obj.get("exit_time"), trajectory=traj)


# --------------------------------------------------------------------------
#   Fields on the doubled state
# --------------------------------------------------------------------------

def make_embedding_field(d: DecompositionEvaluator, W: ExtendedBox):
    """Closure s (2n,) -> e(s) (2n,) for the over-approximation dynamics.

    Each block has a statically known orientation, so evaluation goes
    through the unchecked path; mid-step states that drift a hair out of
    order are still well defined for every evaluator kind.
    """
    W.require_finite("disturbance box")
    n = d.sys.n
    wlo, whi = W.lower, W.upper

    def field(s: np.ndarray) -> np.ndarray:
        x, xh = s[:n], s[n:]
        lower = d.eval_unchecked(x, wlo, xh, whi, "forward")
        upper = d.eval_unchecked(xh, whi, x, wlo, "reversed")
        return np.concatenate([lower, upper])

    return field


def make_gamma_field(D: DecompositionEvaluator, W: ExtendedBox):
    """Closure s -> Gamma(s) for the under-approximation dynamics.

    D decomposes the backward system -F; both blocks are negated D
    evaluations with the disturbance pinned at the box endpoints.
    """
    W.require_finite("disturbance box")
    n = D.sys.n
    wlo, whi = W.lower, W.upper

    def field(s: np.ndarray) -> np.ndarray:
        x, xh = s[:n], s[n:]
        lower = -D.eval_unchecked(x, wlo, xh, whi, "forward")
        upper = -D.eval_unchecked(xh, whi, x, wlo, "reversed")
        return np.concatenate([lower, upper])

    return field


def embedding_field(d: DecompositionEvaluator, W: ExtendedBox,
                    s: EmbeddingState) -> np.ndarray:
    """One embedding-field evaluation at an ordered pair (validates)."""
    if not s.in_TX(tol=TX_TOL):
        raise OrderViolation("embedding state is not ordered (outside T_X)")
    return make_embedding_field(d, W)(s.as_vector())


def gamma_field(D: DecompositionEvaluator, W: ExtendedBox,
                s: EmbeddingState) -> np.ndarray:
    """One Gamma-field evaluation at an ordered pair (validates)."""
    if not s.in_TX(tol=TX_TOL):
        raise OrderViolation("embedding state is not ordered (outside T_X)")
    return make_gamma_field(D, W)(s.as_vector())


# --------------------------------------------------------------------------
#   Integration
# --------------------------------------------------------------------------

def _rk4_step(field, s: np.ndarray, h: float) -> np.ndarray:
    with np.errstate(all="ignore"):
        k1 = field(s)
        k2 = field(s + 0.5 * h * k1)
        k3 = field(s + 0.5 * h * k2)
        k4 = field(s + h * k3)
        return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(field, s0: EmbeddingState, T: float, cfg: IntegratorConfig,
              monitor_TX: bool, X: ExtendedBox) -> ReachResult:
    """Flow `field` from s0 for time T with fixed-step RK4.

    Terminates early with status 'nonfinite' on overflow or NaN,
    'left_domain' when either block exits X, and (when `monitor_TX`)
    'left_TX' when the componentwise order x <= xhat fails beyond TX_TOL
    for TX_PERSISTENCE consecutive accepted steps. Otherwise returns
    status 'ok' with the rectangle spanned by the final pair.
    """
    if T < 0.0:
        raise ValueError("horizon T must be nonnegative")
    if T > cfg.max_time:
        raise ValueError(f"horizon T={T} exceeds max_time={cfg.max_time}")
    if not s0.in_TX(tol=TX_TOL):
        raise OrderViolation("initial embedding state is not ordered")
    n = s0.dim
    if X.dim != n:
        raise ValueError(f"domain dimension {X.dim} does not match state {n}")

    h = cfg.step
    full = int(math.floor(T / h + 1e-9))
    rem = T - full * h
    if rem < 1e-12:
        rem = 0.0
    total = full + (1 if rem else 0)
    stride = max(1, math.ceil(total / MAX_TRAJECTORY))

    s = s0.as_vector()
    traj: list[tuple[float, EmbeddingState]] = [(0.0, s0)]
    if total == 0:
        return ReachResult(status="ok", box=_final_box(s, n), exit_time=None,
                           trajectory=tuple(traj))

    tx_streak = 0
    tx_first_time = 0.0
    for k in range(1, total + 1):
        step_h = h if k <= full else rem
        t = k * h if k <= full else T
        s = _rk4_step(field, s, step_h)

        if not np.all(np.isfinite(s)):
            traj.append((t, _as_state_loose(s, n)))
            return ReachResult(status="nonfinite", box=None, exit_time=t,
                               trajectory=tuple(traj))
        state = _as_state_loose(s, n)
        if not (X.contains(s[:n], tol=TX_TOL) and X.contains(s[n:], tol=TX_TOL)):
            traj.append((t, state))
            return ReachResult(status="left_domain", box=None, exit_time=t,
                               trajectory=tuple(traj))
        if monitor_TX:
            if np.any(s[n:] - s[:n] < -TX_TOL):
                if tx_streak == 0:
                    tx_first_time = t
                tx_streak += 1
                if tx_streak >= TX_PERSISTENCE:
                    traj.append((t, state))
                    return ReachResult(status="left_TX", box=None,
                                       exit_time=tx_first_time,
                                       trajectory=tuple(traj))
            else:
                tx_streak = 0
        if k % stride == 0 and k != total:
            traj.append((t, state))

    traj.append((T, _as_state_loose(s, n)))
    return ReachResult(status="ok", box=_final_box(s, n), exit_time=None,
                       trajectory=tuple(traj))


def _as_state_loose(s: np.ndarray, n: int) -> EmbeddingState:
    return EmbeddingState(s[:n], s[n:])


def _final_box(s: np.ndarray, n: int) -> ExtendedBox:
    # Snap sub-tolerance order jitter before forming the rectangle; the
    # monitor guarantees any crossing here is below TX_TOL.
    snapped = EmbeddingState(np.minimum(s[:n], s[n:]), np.maximum(s[:n], s[n:]))
    return rect(snapped)


# --------------------------------------------------------------------------
#   Reach operators
# --------------------------------------------------------------------------

def _initial_state(X0: ExtendedBox) -> EmbeddingState:
    X0.require_finite("initial set")
    return EmbeddingState(X0.lower, X0.upper)


def over_approximate(sys: SystemSpec, d: DecompositionEvaluator,
                     X0: ExtendedBox, T: float,
                     cfg: IntegratorConfig | None = None) -> ReachResult:
    """Box containing the reachable set of `sys` at time T from X0.

    Integrates the embedding field of `d` from the corner pair of X0.
    The order monitor stays on: a valid decomposition keeps the flow
    ordered, so 'left_TX' here indicates an invalid evaluator.
    """
    cfg = cfg or IntegratorConfig()
    field = make_embedding_field(d, sys.disturbance)
    return integrate(field, _initial_state(X0), T, cfg,
                     monitor_TX=True, X=sys.domain)


def under_approximate(sys: SystemSpec, D_backward: DecompositionEvaluator,
                      X0: ExtendedBox, T: float,
                      cfg: IntegratorConfig | None = None) -> ReachResult:
    """Box contained in the reachable set of `sys` at time T from X0.

    Integrates the Gamma field of `D_backward` (a decomposition of -F)
    from the corner pair of X0. The result is only valid while the pair
    stays ordered, so 'left_TX' is a legitimate, reported outcome with no
    box claimed.
    """
    cfg = cfg or IntegratorConfig()
    field = make_gamma_field(D_backward, sys.disturbance)
    return integrate(field, _initial_state(X0), T, cfg,
                     monitor_TX=True, X=sys.domain)


# --------------------------------------------------------------------------
#   Southeast-order monotonicity audit
# --------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class SEMonotonicityReport:
    ok: bool
    pairs: int
    violations: int
    worst: float


def check_se_monotonicity(d: DecompositionEvaluator, xbox: ExtendedBox,
                          pairs: int, T: float,
                          cfg: IntegratorConfig | None = None,
                          W: ExtendedBox | None = None,
                          seed: int = 0,
                          tol: float = 1e-6) -> SEMonotonicityReport:
    """Flowing the embedding field preserves the southeast order.

    Draws nested interval pairs ([a, ahat] containing [b, bhat]) from
    xbox, integrates both endpoints of each pair, and checks that the
    final states keep a.x <= b.x and b.xhat <= a.xhat within `tol`.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    cfg = cfg or IntegratorConfig()
    W = W if W is not None else d.sys.disturbance
    xbox.require_finite("sample box")
    rng = np.random.default_rng(seed)
    field = make_embedding_field(d, W)
    X = d.sys.domain
    violations = 0
    worst = 0.0
    for _ in range(pairs):
        p = xbox.sample(rng, 2)
        a_lo = np.minimum(p[:, 0], p[:, 1])
        a_hi = np.maximum(p[:, 0], p[:, 1])
        u = rng.uniform(0.0, 0.5, xbox.dim)
        v = rng.uniform(0.0, 0.5, xbox.dim)
        b_lo = a_lo + u * (a_hi - a_lo)
        b_hi = a_hi - v * (a_hi - a_lo)
        ra = integrate(field, EmbeddingState(a_lo, a_hi), T, cfg,
                       monitor_TX=False, X=X)
        rb = integrate(field, EmbeddingState(b_lo, b_hi), T, cfg,
                       monitor_TX=False, X=X)
        if ra.status != "ok" or rb.status != "ok":
            continue
        fa, fb = ra.final_state, rb.final_state
        excess = max(float(np.max(fa.x - fb.x, initial=0.0)),
                     float(np.max(fb.xhat - fa.xhat, initial=0.0)))
        if excess > tol:
            violations += 1
            worst = max(worst, excess)
    return SEMonotonicityReport(ok=violations == 0, pairs=pairs,
                                violations=violations, worst=worst)
