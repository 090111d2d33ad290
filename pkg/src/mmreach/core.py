"""Vectors, extended hyperrectangles, and the partial orders they carry.

Everything downstream works with two orders on R^n and R^{2n}:

* the componentwise order  ``a <= b  iff  a_i <= b_i for all i``
* the southeast order on pairs ``(x, xhat) <=_SE (y, yhat)  iff
  x <= y  and  yhat <= xhat``

For ordered pairs the southeast order is exactly reversed box containment:
``(x, xhat) <=_SE (y, yhat)  iff  [y, yhat] is a subset of [x, xhat]``.

Boxes may carry infinite bounds (the state domain of a system is often all
of R^n); infinities are explicit IEEE values, never large sentinels, and
every operation that needs finite numbers checks for them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "DimensionMismatch",
    "OrderViolation",
    "UnboundedDomain",
    "ExtendedBox",
    "EmbeddingState",
    "le",
    "se_le",
    "rect",
    "box_contains",
]


class DimensionMismatch(ValueError):
    """Vector or box lengths disagree."""


class OrderViolation(ValueError):
    """An input violates the componentwise order it is required to satisfy."""


class UnboundedDomain(ValueError):
    """A finite box was required but an infinite bound was supplied."""


def _as_vector(a: Sequence[float] | np.ndarray) -> np.ndarray:
    v = np.asarray(a, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d vector, got shape {v.shape}")
    return v


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


# --------------------------------------------------------------------------
#   Orders
# --------------------------------------------------------------------------

def le(a: Sequence[float], b: Sequence[float], tol: float = 0.0) -> bool:
    """Componentwise order: a_i <= b_i + tol for all i.

    The default tolerance is 0 (a genuine partial order); integrator state
    classification passes 1e-9 because trajectories sit exactly on order
    boundaries at t=0.
    """
    av, bv = _as_vector(a), _as_vector(b)
    _check_same_length(av, bv)
    return bool(np.all(av <= bv + tol))


def se_le(p: "EmbeddingState | tuple", q: "EmbeddingState | tuple",
          tol: float = 0.0) -> bool:
    """Southeast order on pairs: (x, x') <=_SE (y, y') iff x <= y and y' <= x'."""
    px, pxh = _pair(p)
    qx, qxh = _pair(q)
    return le(px, qx, tol) and le(qxh, pxh, tol)


def _pair(p) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, EmbeddingState):
        return p.x, p.xhat
    x, xh = p
    return _as_vector(x), _as_vector(xh)


# --------------------------------------------------------------------------
#   Boxes
# --------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ExtendedBox:
    """Hyperrectangle [lower, upper], possibly with infinite bounds.

    Immutable; `lower <= upper` is enforced at construction (with the usual
    -inf <= x <= +inf conventions).
    """

    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        lo, hi = _as_vector(lower), _as_vector(upper)
        _check_same_length(lo, hi)
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds must not be NaN")
        if not np.all(lo <= hi):
            raise OrderViolation(f"box lower {lo} exceeds upper {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def require_finite(self, what: str = "box") -> "ExtendedBox":
        if not self.is_finite():
            raise UnboundedDomain(f"{what} must have finite bounds, got {self}")
        return self

    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, p: Sequence[float], tol: float = 0.0) -> bool:
        return box_contains(self, p, tol)

    def contains_box(self, other: "ExtendedBox", tol: float = 0.0) -> bool:
        """True iff `other` is inside self inflated by tol on every face."""
        if other.dim != self.dim:
            raise DimensionMismatch(
                f"cannot compare a {other.dim}-box against a {self.dim}-box")
        return bool(np.all(other.lower >= self.lower - tol)
                    and np.all(other.upper <= self.upper + tol))

    def inflate(self, amount: float | Sequence[float]) -> "ExtendedBox":
        a = np.asarray(amount, dtype=float)
        return ExtendedBox(self.lower - a, self.upper + a)

    def corners(self) -> Iterator[np.ndarray]:
        """All 2^n corner points. Requires a finite box."""
        self.require_finite("corner enumeration")
        n = self.dim
        for mask in range(1 << n):
            yield np.array([self.upper[i] if (mask >> i) & 1 else self.lower[i]
                            for i in range(n)])

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """`count` points uniform in the box, shape (dim, count)."""
        self.require_finite("sampling")
        return rng.uniform(self.lower[:, None], self.upper[:, None],
                           size=(self.dim, count))

    # JSON boundary: infinities travel as the strings "inf" / "-inf".
    def to_json(self) -> dict:
        return {"lower": [_scalar_to_json(v) for v in self.lower],
                "upper": [_scalar_to_json(v) for v in self.upper]}

    @classmethod
    def from_json(cls, obj: dict) -> "ExtendedBox":
        if not isinstance(obj, dict) or "lower" not in obj or "upper" not in obj:
            raise ValueError(f"box JSON must have 'lower' and 'upper' keys, got {obj!r}")
        return cls([_scalar_from_json(v) for v in obj["lower"]],
                   [_scalar_from_json(v) for v in obj["upper"]])

    def __repr__(self) -> str:
        axes = "x".join(f"[{lo:g},{hi:g}]" for lo, hi in zip(self.lower, self.upper))
        return f"ExtendedBox({axes})"


def _scalar_to_json(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _scalar_from_json(v) -> float:
    if isinstance(v, str):
        if v == "inf":
            return math.inf
        if v == "-inf":
            return -math.inf
        raise ValueError(f"bad extended scalar {v!r}; only 'inf'/'-inf' strings allowed")
    return float(v)


def box_contains(b: ExtendedBox, p: Sequence[float], tol: float = 0.0) -> bool:
    """True iff lower - tol <= p <= upper + tol componentwise."""
    pv = _as_vector(p)
    _check_same_length(pv, b.lower)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return bool(np.all(pv >= b.lower - tol) and np.all(pv <= b.upper + tol))


# --------------------------------------------------------------------------
#   Embedding states (x, xhat) in R^{2n}
# --------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class EmbeddingState:
    """A point (x, xhat) of the doubled state space.

    The embedding flow lives on T_X = {(x, xhat) : x <= xhat}; `in_TX`
    tests membership with an absolute tolerance.
    """

    x: np.ndarray
    xhat: np.ndarray

    def __init__(self, x: Sequence[float], xhat: Sequence[float]):
        xv, xhv = _as_vector(x), _as_vector(xhat)
        _check_same_length(xv, xhv)
        xv.flags.writeable = False
        xhv.flags.writeable = False
        object.__setattr__(self, "x", xv)
        object.__setattr__(self, "xhat", xhv)

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    def in_TX(self, tol: float = 0.0) -> bool:
        return le(self.x, self.xhat, tol)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.xhat])

    @classmethod
    def from_vector(cls, s: Sequence[float]) -> "EmbeddingState":
        v = _as_vector(s)
        if v.shape[0] % 2:
            raise DimensionMismatch("embedding vector length must be even")
        n = v.shape[0] // 2
        return cls(v[:n], v[n:])


def rect(a: EmbeddingState) -> ExtendedBox:
    """The box [a.x, a.xhat]; requires the pair to be ordered."""
    if not a.in_TX():
        raise OrderViolation(f"rect needs x <= xhat, got x={a.x}, xhat={a.xhat}")
    return ExtendedBox(a.x, a.xhat)
