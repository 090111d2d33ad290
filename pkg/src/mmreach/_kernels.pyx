# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: postfix program evaluation and box-constrained
grid/refinement search.

Behavioural twin of `_kernels_py`; the tests hold both backends to the
same results. Grid points are enumerated in C order (last axis fastest)
with numpy-compatible linspace coordinates, and ties keep the first point
encountered, so refinement follows the same path as the fallback.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport cos as c_cos
from libc.math cimport exp as c_exp
from libc.math cimport isnan
from libc.math cimport sin as c_sin
from libc.stdlib cimport free, malloc

cnp.import_array()

BACKEND_NAME = "cython"

cdef enum:
    OP_CONST = 0
    OP_VAR = 1
    OP_ADD = 2
    OP_SUB = 3
    OP_MUL = 4
    OP_DIV = 5
    OP_NEG = 6
    OP_POW = 7
    OP_ABS = 8
    OP_MIN = 9
    OP_MAX = 10
    OP_SIN = 11
    OP_COS = 12
    OP_EXP = 13


cdef inline double _int_pow(double base, int k) nogil:
    cdef bint neg = k < 0
    cdef unsigned int kk
    cdef double acc = 1.0
    cdef double sq = base
    cdef bint have_acc = 0
    if k == 0:
        return 1.0
    kk = <unsigned int>(-k) if neg else <unsigned int>k
    while kk:
        if kk & 1u:
            if have_acc:
                acc = acc * sq
            else:
                acc = sq
                have_acc = 1
        kk >>= 1
        if kk:
            sq = sq * sq
    if neg:
        return 1.0 / acc
    return acc


cdef inline double _eval_one(const cnp.int32_t* ops, const cnp.int32_t* iargs,
                             Py_ssize_t nops, const double* consts,
                             const double* x, double* stack) nogil:
    """Evaluate the program at a single point laid out in x."""
    cdef Py_ssize_t sp = 0
    cdef Py_ssize_t i
    cdef int op, arg
    cdef double a, b
    for i in range(nops):
        op = ops[i]
        arg = iargs[i]
        if op == OP_CONST:
            stack[sp] = consts[arg]
            sp += 1
        elif op == OP_VAR:
            stack[sp] = x[arg]
            sp += 1
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == OP_ABS:
            a = stack[sp - 1]
            stack[sp - 1] = -a if a < 0 else a
        elif op == OP_SIN:
            stack[sp - 1] = c_sin(stack[sp - 1])
        elif op == OP_COS:
            stack[sp - 1] = c_cos(stack[sp - 1])
        elif op == OP_EXP:
            stack[sp - 1] = c_exp(stack[sp - 1])
        elif op == OP_POW:
            stack[sp - 1] = _int_pow(stack[sp - 1], arg)
        else:
            sp -= 1
            b = stack[sp]
            a = stack[sp - 1]
            if op == OP_ADD:
                stack[sp - 1] = a + b
            elif op == OP_SUB:
                stack[sp - 1] = a - b
            elif op == OP_MUL:
                stack[sp - 1] = a * b
            elif op == OP_DIV:
                stack[sp - 1] = a / b
            elif op == OP_MIN:
                # numpy.minimum semantics: NaN in either slot propagates
                stack[sp - 1] = a if (a < b or isnan(a)) else b
            else:
                stack[sp - 1] = a if (a > b or isnan(a)) else b
    return stack[0]


def run_program(ops, iargs, consts, int stack_need, X):
    """Execute a postfix program over a (nvars, N) point matrix -> (N,)."""
    cdef cnp.ndarray[cnp.int32_t, ndim=1] ops_a = np.ascontiguousarray(ops, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] iargs_a = np.ascontiguousarray(iargs, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] consts_a = np.ascontiguousarray(consts, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] X_a = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t nvars = X_a.shape[0]
    cdef Py_ssize_t N = X_a.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(N, dtype=np.float64)
    cdef double* stack = <double*>malloc(max(stack_need, 1) * sizeof(double))
    cdef double* point = <double*>malloc(max(nvars, 1) * sizeof(double))
    if stack == NULL or point == NULL:
        free(stack)
        free(point)
        raise MemoryError()
    cdef Py_ssize_t j, v
    cdef Py_ssize_t nops = ops_a.shape[0]
    try:
        with nogil:
            for j in range(N):
                for v in range(nvars):
                    point[v] = X_a[v, j]
                out[j] = _eval_one(&ops_a[0], &iargs_a[0], nops, &consts_a[0],
                                   point, stack)
    finally:
        free(stack)
        free(point)
    return out


cdef inline double _axis_coord(double lo, double hi, Py_ssize_t i,
                               Py_ssize_t count, double step) nogil:
    if count <= 1:
        return lo
    if i == count - 1:
        return hi                     # exact endpoint, as numpy linspace
    return lo + i * step


def box_extremum(ops, iargs, consts, int stack_need, template, free_slots,
                 lo, hi, int npts, int keep, double shrink, int rounds,
                 double tol, bint maximize):
    """Grid search with keep-best shrink refinement over [lo, hi].

    See `_kernels_py.box_extremum` for the algorithm; this runs the same
    passes with scalar loops and no intermediate grid materialisation.
    """
    cdef cnp.ndarray[cnp.int32_t, ndim=1] ops_a = np.ascontiguousarray(ops, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] iargs_a = np.ascontiguousarray(iargs, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] consts_a = np.ascontiguousarray(consts, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tmpl = np.ascontiguousarray(template, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] slots = np.ascontiguousarray(free_slots, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lo_a = np.ascontiguousarray(lo, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hi_a = np.ascontiguousarray(hi, dtype=np.float64)
    cdef Py_ssize_t k = lo_a.shape[0]
    cdef Py_ssize_t nvars = tmpl.shape[0]
    cdef Py_ssize_t nops = ops_a.shape[0]

    if keep < 1:
        raise ValueError("keep must be >= 1")

    # Working storage: point buffer, stack, odometer, per-axis geometry,
    # keep-best arrays and their points.
    cdef double* point = <double*>malloc(max(nvars, 1) * sizeof(double))
    cdef double* stack = <double*>malloc(max(stack_need, 1) * sizeof(double))
    cdef Py_ssize_t* counts = <Py_ssize_t*>malloc(max(k, 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* idx = <Py_ssize_t*>malloc(max(k, 1) * sizeof(Py_ssize_t))
    cdef double* steps = <double*>malloc(max(k, 1) * sizeof(double))
    cdef double* cur_lo = <double*>malloc(max(k, 1) * sizeof(double))
    cdef double* cur_hi = <double*>malloc(max(k, 1) * sizeof(double))
    cdef double* coord = <double*>malloc(max(k, 1) * sizeof(double))
    cdef double* keep_vals = <double*>malloc(keep * sizeof(double))
    cdef double* keep_pts = <double*>malloc(max(keep * k, 1) * sizeof(double))
    cdef double* center = <double*>malloc(max(k, 1) * sizeof(double))
    cdef double* local_pt = <double*>malloc(max(k, 1) * sizeof(double))
    cdef double* w = <double*>malloc(max(k, 1) * sizeof(double))
    if (point == NULL or stack == NULL or counts == NULL or idx == NULL or
            steps == NULL or cur_lo == NULL or cur_hi == NULL or coord == NULL or
            keep_vals == NULL or keep_pts == NULL or center == NULL or
            local_pt == NULL or w == NULL):
        free(point); free(stack); free(counts); free(idx); free(steps)
        free(cur_lo); free(cur_hi); free(coord); free(keep_vals)
        free(keep_pts); free(center); free(local_pt); free(w)
        raise MemoryError()

    cdef double sign = -1.0 if maximize else 1.0
    cdef double best, v, worst, res, hw, lo_c, hi_c, local_best
    cdef Py_ssize_t j, s, total, node, nkept, pos, q, r
    cdef bint all_degenerate = 1
    cdef int rnd

    try:
        for j in range(k):
            counts[j] = npts if hi_a[j] > lo_a[j] else 1
            if counts[j] > 1:
                all_degenerate = 0

        with nogil:
            for j in range(nvars):
                point[j] = tmpl[j]

            # ---- coarse pass over the full box, tracking the keep best
            for j in range(k):
                cur_lo[j] = lo_a[j]
                cur_hi[j] = hi_a[j]
                steps[j] = (cur_hi[j] - cur_lo[j]) / (counts[j] - 1) if counts[j] > 1 else 0.0
                idx[j] = 0
            total = 1
            for j in range(k):
                total *= counts[j]
            nkept = 0
            for node in range(total):
                for j in range(k):
                    coord[j] = _axis_coord(cur_lo[j], cur_hi[j], idx[j], counts[j], steps[j])
                    point[slots[j]] = coord[j]
                v = sign * _eval_one(&ops_a[0], &iargs_a[0], nops, &consts_a[0], point, stack)
                # insertion into the sorted keep list; strict < keeps the
                # first point on ties, matching the stable argsort fallback
                if nkept < keep:
                    pos = nkept
                    while pos > 0 and v < keep_vals[pos - 1]:
                        keep_vals[pos] = keep_vals[pos - 1]
                        for q in range(k):
                            keep_pts[pos * k + q] = keep_pts[(pos - 1) * k + q]
                        pos -= 1
                    keep_vals[pos] = v
                    for q in range(k):
                        keep_pts[pos * k + q] = coord[q]
                    nkept += 1
                elif v < keep_vals[keep - 1]:
                    pos = keep - 1
                    while pos > 0 and v < keep_vals[pos - 1]:
                        keep_vals[pos] = keep_vals[pos - 1]
                        for q in range(k):
                            keep_pts[pos * k + q] = keep_pts[(pos - 1) * k + q]
                        pos -= 1
                    keep_vals[pos] = v
                    for q in range(k):
                        keep_pts[pos * k + q] = coord[q]
                # odometer, last axis fastest
                for j in range(k - 1, -1, -1):
                    idx[j] += 1
                    if idx[j] < counts[j]:
                        break
                    idx[j] = 0
            best = keep_vals[0]

            # ---- shrink refinement around each kept seed
            if rounds > 0 and not all_degenerate:
                for s in range(nkept):
                    for j in range(k):
                        center[j] = keep_pts[s * k + j]
                        w[j] = hi_a[j] - lo_a[j]
                    for rnd in range(rounds):
                        res = 0.0
                        for j in range(k):
                            w[j] = w[j] * shrink
                            hw = 0.5 * w[j]
                            lo_c = center[j] - hw
                            hi_c = center[j] + hw
                            if lo_c < lo_a[j]:
                                lo_c = lo_a[j]
                            if hi_c > hi_a[j]:
                                hi_c = hi_a[j]
                            cur_lo[j] = lo_c
                            cur_hi[j] = hi_c
                            steps[j] = (hi_c - lo_c) / (counts[j] - 1) if counts[j] > 1 else 0.0
                            if counts[j] > 1 and (hi_c - lo_c) / (counts[j] - 1) > res:
                                res = (hi_c - lo_c) / (counts[j] - 1)
                            idx[j] = 0
                        local_best = 0.0
                        for node in range(total):
                            for j in range(k):
                                coord[j] = _axis_coord(cur_lo[j], cur_hi[j], idx[j], counts[j], steps[j])
                                point[slots[j]] = coord[j]
                            v = sign * _eval_one(&ops_a[0], &iargs_a[0], nops, &consts_a[0], point, stack)
                            if node == 0 or v < local_best:
                                local_best = v
                                for q in range(k):
                                    local_pt[q] = coord[q]
                            for j in range(k - 1, -1, -1):
                                idx[j] += 1
                                if idx[j] < counts[j]:
                                    break
                                idx[j] = 0
                        if local_best < best:
                            best = local_best
                        for j in range(k):
                            center[j] = local_pt[j]
                        if res <= tol:
                            break
        return float(sign * best)
    finally:
        free(point); free(stack); free(counts); free(idx); free(steps)
        free(cur_lo); free(cur_hi); free(coord); free(keep_vals)
        free(keep_pts); free(center); free(local_pt); free(w)
