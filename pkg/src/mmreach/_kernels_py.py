"""Pure numpy implementations of the hot kernels.

Mirrors `_kernels.pyx` op for op: same grid enumeration order, same
tie-breaking, same integer-power multiplication sequence. The compiled
module is preferred at import time; this one keeps the package working
without a C toolchain.
"""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

# Opcodes; keep in sync with expr.compile_program and _kernels.pyx.
(OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG, OP_POW, OP_ABS,
 OP_MIN, OP_MAX, OP_SIN, OP_COS, OP_EXP) = range(14)


def run_program(ops, iargs, consts, stack_need, X):
    """Execute a postfix program over a (nvars, N) point matrix -> (N,)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    N = X.shape[1]
    stack: list[np.ndarray] = []
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for op, arg in zip(ops, iargs):
            if op == OP_CONST:
                stack.append(np.full(N, consts[arg]))
            elif op == OP_VAR:
                stack.append(X[arg].copy())
            elif op == OP_NEG:
                stack[-1] = -stack[-1]
            elif op == OP_ABS:
                stack[-1] = np.abs(stack[-1])
            elif op == OP_SIN:
                stack[-1] = np.sin(stack[-1])
            elif op == OP_COS:
                stack[-1] = np.cos(stack[-1])
            elif op == OP_EXP:
                stack[-1] = np.exp(stack[-1])
            elif op == OP_POW:
                stack[-1] = _int_pow(stack[-1], int(arg))
            else:
                b = stack.pop()
                a = stack[-1]
                if op == OP_ADD:
                    stack[-1] = a + b
                elif op == OP_SUB:
                    stack[-1] = a - b
                elif op == OP_MUL:
                    stack[-1] = a * b
                elif op == OP_DIV:
                    stack[-1] = a / b
                elif op == OP_MIN:
                    stack[-1] = np.minimum(a, b)
                elif op == OP_MAX:
                    stack[-1] = np.maximum(a, b)
                else:
                    raise ValueError(f"bad opcode {op}")
    return stack[-1]


def _int_pow(base, k):
    if k == 0:
        return np.ones_like(base)
    neg = k < 0
    k = -k if neg else k
    acc = None
    sq = base
    while k:
        if k & 1:
            acc = sq if acc is None else acc * sq
        k >>= 1
        if k:
            sq = sq * sq
    if neg:
        with np.errstate(divide="ignore"):
            return 1.0 / acc
    return acc


def _axis_points(lo, hi, count):
    return np.linspace(lo, hi, count) if count > 1 else np.array([lo])


def _grid_pass(ops, iargs, consts, stack_need, template, free_slots,
               lo, hi, counts, maximize):
    """Evaluate over the product grid; return (values, points (k, N))."""
    axes = [_axis_points(lo[j], hi[j], counts[j]) for j in range(len(lo))]
    if axes:
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids])
    else:
        pts = np.empty((0, 1))
    N = pts.shape[1]
    X = np.repeat(template[:, None], N, axis=1)
    for j, slot in enumerate(free_slots):
        X[slot] = pts[j]
    vals = run_program(ops, iargs, consts, stack_need, X)
    return vals, pts


def box_extremum(ops, iargs, consts, stack_need, template, free_slots,
                 lo, hi, npts, keep, shrink, rounds, tol, maximize):
    """Grid search with keep-best shrink refinement over [lo, hi].

    Coarse pass on the full box, then `rounds` of local refinement around
    each of the `keep` best coarse points, shrinking the search box by
    `shrink` per round and clipping to the original bounds. Returns the
    best objective value seen (min, or max when `maximize`).
    """
    template = np.asarray(template, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    free_slots = np.asarray(free_slots, dtype=np.int64)
    k = lo.shape[0]
    counts = np.array([npts if hi[j] > lo[j] else 1 for j in range(k)], dtype=np.int64)

    vals, pts = _grid_pass(ops, iargs, consts, stack_need, template, free_slots,
                           lo, hi, counts, maximize)
    order = np.argsort(-vals if maximize else vals, kind="stable")[:keep]
    best_val = vals[order[0]]
    if rounds == 0 or np.all(counts == 1):
        return float(best_val)

    width0 = hi - lo
    for seed_idx in order:
        center = pts[:, seed_idx].copy()
        w = width0.copy()
        for _ in range(rounds):
            w = w * shrink
            lo_r = np.clip(center - 0.5 * w, lo, hi)
            hi_r = np.clip(center + 0.5 * w, lo, hi)
            vals, pts_r = _grid_pass(ops, iargs, consts, stack_need, template,
                                     free_slots, lo_r, hi_r, counts, maximize)
            i = int(np.argmax(vals) if maximize else np.argmin(vals))
            if (vals[i] > best_val) if maximize else (vals[i] < best_val):
                best_val = vals[i]
            center = pts_r[:, i].copy()
            res = np.max((hi_r - lo_r) / np.maximum(counts - 1, 1))
            if res <= tol:
                break
    return float(best_val)
