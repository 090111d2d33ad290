"""Brute-force ground truth for reach boxes.

Monte Carlo sampling of the true flow provides the reference the
embedding results are judged against: an over-approximation must contain
every sampled endpoint, and an under-approximation must survive the
constructive roundtrip (flow each claimed point backward, land in X0,
flow forward again under the time-reversed disturbance, return to the
point).

Disturbance signals are piecewise constant with a fixed number of equal
segments, each level drawn uniformly from W. That class under-explores
the true reachable set, which errs on the safe side for containment
checks; the roundtrip check needs only one admissible signal per point,
so the restriction costs nothing there.

Trajectory batches integrate vectorized over samples and are split into
fixed-size chunks farmed to a thread pool; chunk boundaries do not depend
on the worker count, so results for a given seed are bit-identical
however many threads run.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import ExtendedBox
from .embedding import IntegratorConfig
from .systems import SystemSpec, eval_field, negate_system

__all__ = [
    "OracleConfig",
    "MCReachResult",
    "CheckOverReport",
    "RoundtripReport",
    "mc_reach",
    "check_over",
    "roundtrip_under_check",
    "simulate_batch",
    "endpoints_to_csv",
    "thread_count",
]

# Samples per vectorized integration chunk; fixed so that results do not
# depend on how many workers the pool happens to use.
CHUNK = 512

DOMAIN_TOL = 1e-9


def thread_count() -> int:
    """Worker cap: MMREACH_THREADS if set, else up to 8 cores."""
    env = os.environ.get("MMREACH_THREADS", "").strip()
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ValueError(f"MMREACH_THREADS must be an integer, got {env!r}")
        if k < 1:
            raise ValueError("MMREACH_THREADS must be >= 1")
        return k
    return min(8, os.cpu_count() or 1)


@dataclass(frozen=True, slots=True)
class OracleConfig:
    """Monte Carlo settings: sample count, disturbance segments, seed."""

    samples: int = 10000
    dist_segments: int = 8
    seed: int = 0
    integrator: IntegratorConfig = dc_field(default_factory=IntegratorConfig)

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.dist_segments < 1:
            raise ValueError("dist_segments must be >= 1")

    def to_json(self) -> dict:
        return {"samples": self.samples, "dist_segments": self.dist_segments,
                "seed": self.seed, "integrator": self.integrator.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "OracleConfig":
        obj = dict(obj)
        obj["integrator"] = IntegratorConfig.from_json(obj["integrator"])
        return cls(**obj)


# --------------------------------------------------------------------------
#   Vectorized trajectory batches
# --------------------------------------------------------------------------

def simulate_batch(sys: SystemSpec, x0: np.ndarray, T: float, step: float,
                   levels: np.ndarray | None = None,
                   reverse_signal: bool = False,
                   backward: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """RK4 endpoints for a batch of initial states under one signal each.

    x0 has shape (n, N); `levels` has shape (m, segments, N) and encodes a
    piecewise-constant signal per sample (equal segments over [0, T]). A
    step covering [t, t+h] uses the segment containing its midpoint
    t + h/2; with `reverse_signal` the signal plays backwards, reading
    T - t - h/2 instead. Midpoints sit h/2 away from segment edges when
    steps align with them, so a pass and its time mirror read identical
    segments instead of disagreeing on boundary rounding.
    `backward` integrates -F. Returns (states (n, N), alive (N,)); samples
    that left the domain or went nonfinite are frozen at their last good
    state with alive=False.
    """
    x0 = np.asarray(x0, dtype=float)
    n, N = x0.shape
    if sys.m and levels is None:
        raise ValueError("disturbed system needs disturbance levels")
    nseg = levels.shape[1] if sys.m else 1
    seg_len = T / nseg if T > 0 else math.inf

    fsys = negate_system(sys) if backward else sys
    states = x0.copy()
    alive = np.ones(N, dtype=bool)

    full = int(math.floor(T / step + 1e-9))
    rem = T - full * step
    if rem < 1e-12:
        rem = 0.0
    total = full + (1 if rem else 0)

    for k in range(total):
        t = k * step
        h = step if k < full else rem
        if sys.m:
            if reverse_signal:
                seg = int(math.floor((T - t - 0.5 * h) / seg_len))
            else:
                seg = int(math.floor((t + 0.5 * h) / seg_len))
            seg = min(max(seg, 0), nseg - 1)
            w = levels[:, seg, :]
        else:
            w = None
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        cur = states[:, idx]
        wcur = w[:, idx] if w is not None else None
        nxt = _rk4_batch(fsys, cur, wcur, h)
        good = np.all(np.isfinite(nxt), axis=0)
        good &= np.all(nxt >= sys.domain.lower[:, None] - DOMAIN_TOL, axis=0)
        good &= np.all(nxt <= sys.domain.upper[:, None] + DOMAIN_TOL, axis=0)
        states[:, idx[good]] = nxt[:, good]
        alive[idx[~good]] = False
    return states, alive


def _rk4_batch(sys: SystemSpec, x: np.ndarray, w: np.ndarray | None,
               h: float) -> np.ndarray:
    with np.errstate(all="ignore"):
        k1 = eval_field(sys, x, w, validate=False)
        k2 = eval_field(sys, x + 0.5 * h * k1, w, validate=False)
        k3 = eval_field(sys, x + 0.5 * h * k2, w, validate=False)
        k4 = eval_field(sys, x + h * k3, w, validate=False)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _chunked(work, N: int):
    """Run work(start, stop) over fixed CHUNK ranges on the thread pool."""
    ranges = [(s, min(s + CHUNK, N)) for s in range(0, N, CHUNK)]
    if len(ranges) == 1:
        return [work(*ranges[0])]
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        return list(pool.map(lambda r: work(*r), ranges))


# --------------------------------------------------------------------------
#   Monte Carlo reachable-set sampling
# --------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class MCReachResult:
    """Endpoint cloud of the sampled flow and its bounding box.

    `endpoints` holds the (n, K) completed endpoints; `exited` counts
    samples whose trajectory left the domain or overflowed (they are
    excluded from the box but reported, not dropped silently).
    """

    endpoints: np.ndarray
    box: ExtendedBox
    exited: int
    total: int

    def to_json(self) -> dict:
        return {"box": self.box.to_json(), "exited": self.exited,
                "total": self.total, "completed": int(self.endpoints.shape[1])}


def mc_reach(sys: SystemSpec, X0: ExtendedBox, T: float,
             cfg: OracleConfig | None = None) -> MCReachResult:
    """Sample the true flow from X0 (uniform draws plus all corners).

    Each sample gets an independent piecewise-constant disturbance
    signal. Endpoints of trajectories that stay in the domain form the
    cloud; its componentwise bounding box is the reference for
    containment checks.
    """
    cfg = cfg or OracleConfig()
    X0.require_finite("initial set")
    if T < 0.0:
        raise ValueError("horizon T must be nonnegative")
    rng = np.random.default_rng(cfg.seed)
    corners = np.stack(list(X0.corners()), axis=1)
    draws = X0.sample(rng, cfg.samples)
    x0 = np.concatenate([draws, corners], axis=1)
    N = x0.shape[1]
    if sys.m:
        wlo = sys.disturbance.lower[:, None, None]
        whi = sys.disturbance.upper[:, None, None]
        levels = rng.uniform(0.0, 1.0, (sys.m, cfg.dist_segments, N))
        levels = wlo + levels * (whi - wlo)
    else:
        levels = None

    def work(a: int, b: int):
        lv = levels[:, :, a:b] if levels is not None else None
        return simulate_batch(sys, x0[:, a:b], T, cfg.integrator.step, lv)

    parts = _chunked(work, N)
    states = np.concatenate([p[0] for p in parts], axis=1)
    alive = np.concatenate([p[1] for p in parts])
    endpoints = states[:, alive]
    if endpoints.shape[1] == 0:
        raise ValueError("every oracle sample left the domain; no endpoints")
    box = ExtendedBox(endpoints.min(axis=1), endpoints.max(axis=1))
    return MCReachResult(endpoints=endpoints, box=box,
                         exited=int(N - alive.sum()), total=N)


# --------------------------------------------------------------------------
#   Containment and roundtrip checks
# --------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class CheckOverReport:
    ok: bool
    outside: int
    total: int
    vacuous: bool

    def to_json(self) -> dict:
        return {"ok": self.ok, "outside": self.outside,
                "total": self.total, "vacuous": self.vacuous}


def check_over(box: ExtendedBox, endpoints: np.ndarray,
               tol: float) -> CheckOverReport:
    """Count endpoints outside box inflated by tol; pass iff none.

    An empty cloud certifies nothing, so it is reported as vacuous and
    does not pass.
    """
    if tol < 0.0:
        raise ValueError("tol must be nonnegative")
    endpoints = np.asarray(endpoints, dtype=float)
    total = endpoints.shape[1] if endpoints.ndim == 2 else 0
    if total == 0:
        return CheckOverReport(ok=False, outside=0, total=0, vacuous=True)
    inside = np.all((endpoints >= box.lower[:, None] - tol)
                    & (endpoints <= box.upper[:, None] + tol), axis=0)
    outside = int(total - inside.sum())
    return CheckOverReport(ok=outside == 0, outside=outside,
                           total=total, vacuous=False)


@dataclass(frozen=True, slots=True)
class RoundtripReport:
    ok: bool
    probes: int
    failures: int
    worst_x0_gap: float
    worst_return_gap: float

    def to_json(self) -> dict:
        return {"ok": self.ok, "probes": self.probes,
                "failures": self.failures,
                "worst_x0_gap": self.worst_x0_gap,
                "worst_return_gap": self.worst_return_gap}


def roundtrip_under_check(sys: SystemSpec, under_box: ExtendedBox,
                          X0: ExtendedBox, T: float, n_probe: int,
                          cfg: OracleConfig | None = None,
                          tol: float = 1e-3, tol_rt: float = 1e-3,
                          k_retry: int = 5) -> RoundtripReport:
    """Constructive membership check for a claimed under-approximation.

    For each probe y in the box (uniform draws plus corners): flow the
    backward system from y for time T under a sampled signal w', check
    the endpoint x lands in X0 + tol, then flow the original system from
    x under the time-reversed signal and check it returns to y within
    tol_rt. Any admissible signal should work, so each probe may retry
    with up to `k_retry` fresh draws to step around numerical domain
    exits. All randomness is drawn up front from the seed.
    """
    cfg = cfg or OracleConfig()
    if n_probe < 1:
        raise ValueError("n_probe must be >= 1")
    under_box.require_finite("under-approximation box")
    rng = np.random.default_rng(cfg.seed)
    corners = np.stack(list(under_box.corners()), axis=1)
    probes = np.concatenate([under_box.sample(rng, n_probe), corners], axis=1)
    P = probes.shape[1]
    nseg = cfg.dist_segments
    step = cfg.integrator.step

    if sys.m:
        wlo = sys.disturbance.lower[:, None, None, None]
        whi = sys.disturbance.upper[:, None, None, None]
        u = rng.uniform(0.0, 1.0, (sys.m, nseg, k_retry, P))
        all_levels = wlo + u * (whi - wlo)
    else:
        all_levels = None
        k_retry = 1

    if T == 0.0:
        gaps = np.maximum(X0.lower[:, None] - probes, probes - X0.upper[:, None])
        worst = float(np.max(gaps))
        fails = int(np.count_nonzero(np.any(gaps > tol, axis=0)))
        return RoundtripReport(ok=fails == 0, probes=P, failures=fails,
                               worst_x0_gap=max(worst, 0.0),
                               worst_return_gap=0.0)

    pending = np.arange(P)
    worst_x0 = 0.0
    worst_rt = 0.0
    for attempt in range(k_retry):
        if pending.size == 0:
            break
        y = probes[:, pending]
        lv = all_levels[:, :, attempt, :][:, :, pending] if sys.m else None

        def back(a: int, b: int):
            return simulate_batch(sys, y[:, a:b], T, step,
                                  None if lv is None else lv[:, :, a:b],
                                  backward=True)

        parts = _chunked(back, pending.size)
        x_end = np.concatenate([p[0] for p in parts], axis=1)
        alive = np.concatenate([p[1] for p in parts])

        x0_gap = np.maximum(X0.lower[:, None] - x_end, x_end - X0.upper[:, None])
        x0_ok = alive & np.all(x0_gap <= tol, axis=0)

        def fwd(a: int, b: int):
            return simulate_batch(sys, x_end[:, a:b], T, step,
                                  None if lv is None else lv[:, :, a:b],
                                  reverse_signal=True)

        parts = _chunked(fwd, pending.size)
        y_back = np.concatenate([p[0] for p in parts], axis=1)
        alive_f = np.concatenate([p[1] for p in parts])
        rt_gap = np.max(np.abs(y_back - y), axis=0)
        passed = x0_ok & alive_f & (rt_gap <= tol_rt)

        if attempt == k_retry - 1 or not sys.m:
            last = ~passed
            if np.any(last):
                worst_x0 = max(worst_x0, float(np.max(x0_gap[:, last])))
                worst_rt = max(worst_rt, float(np.max(rt_gap[last])))
        pending = pending[~passed]
        if not sys.m:
            break

    failures = int(pending.size)
    return RoundtripReport(ok=failures == 0, probes=P, failures=failures,
                           worst_x0_gap=worst_x0, worst_return_gap=worst_rt)


# --------------------------------------------------------------------------
#   CSV boundary
# --------------------------------------------------------------------------

def endpoints_to_csv(endpoints: np.ndarray, path) -> None:
    """One row per endpoint, columns x1..xn, full double precision."""
    endpoints = np.asarray(endpoints, dtype=float)
    n = endpoints.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(n)])
        for col in endpoints.T:
            writer.writerow([format(v, ".17g") for v in col])
