# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels (atomic belief update, matrix-game simplex, horizon backups).

Same contracts as :mod:`pogs._pycore`.
"""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, calloc, free, qsort
from libc.math cimport exp, log1p, pow, fabs, fmin, fmax

from pogs.errors import NodeBudgetExceeded

cnp.import_array()

NAME = "compiled"

cdef double DROP_WEIGHT = 1e-15
cdef double RENORM_SLACK = 1e-14
cdef double PIVOT_EPS = 1e-12

ctypedef struct Atom:
    long y
    double s
    double w

ctypedef struct Ctx:
    int nx, ny, na, nb, J
    const double* cost
    const double* kern
    const double* qx
    const unsigned char* adm1
    const unsigned char* adm2
    double beta
    int ukind
    double uparam
    const double* consts
    double tol
    long nodes
    long budget


cdef inline double _u(int kind, double p, double s) noexcept nogil:
    if kind == 0:
        return s
    if kind == 1:
        return exp(p * s) / p
    if kind == 2:
        return pow(s, p)
    return log1p(s)


cdef int _atom_cmp(const void* pa, const void* pb) noexcept nogil:
    cdef const Atom* a = <const Atom*> pa
    cdef const Atom* b = <const Atom*> pb
    if a.y < b.y:
        return -1
    if a.y > b.y:
        return 1
    if a.s < b.s:
        return -1
    if a.s > b.s:
        return 1
    if a.w < b.w:
        return -1
    if a.w > b.w:
        return 1
    return 0


cdef int _canon(Atom* at, int n, double tol) noexcept nogil:
    cdef int i = 0, j, out = 0, count, dropped = 0
    cdef long y
    cdef double ws, sw, lo, last, snew, total = 0.0
    if n == 0:
        return 0
    qsort(at, n, sizeof(Atom), _atom_cmp)
    while i < n:
        y = at[i].y
        lo = at[i].s
        last = lo
        ws = at[i].w
        sw = at[i].w * at[i].s
        j = i + 1
        while j < n and at[j].y == y and at[j].s - last <= tol:
            ws += at[j].w
            sw += at[j].w * at[j].s
            last = at[j].s
            j += 1
        count = j - i
        if count == 1:
            snew = lo
        else:
            snew = fmin(fmax(sw / ws, lo), last)
        if ws >= DROP_WEIGHT:
            at[out].y = y
            at[out].s = snew
            at[out].w = ws
            out += 1
        else:
            dropped = 1
        i = j
    for i in range(out):
        total += at[i].w
    if dropped or fabs(total - 1.0) > RENORM_SLACK:
        for i in range(out):
            at[i].w = at[i].w / total
    return out


cdef int _phi(const Ctx* c, int x, int a, int b, int xn, const Atom* at, int n,
              double z, Atom* out, double* denom) noexcept nogil:
    cdef int i, yn, m = 0
    cdef long base
    cdef double d = 0.0, p, shifted
    for i in range(n):
        base = ((x * c.ny + at[i].y) * c.na + a) * c.nb + b
        d += at[i].w * c.qx[base * c.nx + xn]
    denom[0] = d
    if not d > 0.0:
        return 0
    for i in range(n):
        base = ((x * c.ny + at[i].y) * c.na + a) * c.nb + b
        shifted = at[i].s + z * c.cost[base]
        for yn in range(c.ny):
            p = at[i].w * c.kern[(base * c.nx + xn) * c.ny + yn]
            if p > 0.0:
                out[m].y = yn
                out[m].s = shifted
                out[m].w = p / d
                m += 1
    return _canon(out, m, c.tol)


cdef int _simplex(const double* M, int m, int n, double* row, double* col,
                  double* value) noexcept nogil:
    """Returns 0 on success, -1 on allocation failure, -2 on iteration limit."""
    cdef int width = n + m + 1
    cdef int i, j, e, leave, it, rc = 0
    cdef double mn = M[0], shift, piv, r, best, tie, f, sx, sy, v
    cdef double* T = <double*> calloc((m + 1) * width, sizeof(double))
    cdef int* basis = <int*> malloc(m * sizeof(int))
    if T == NULL or basis == NULL:
        free(T)
        free(basis)
        return -1
    for i in range(m * n):
        if M[i] < mn:
            mn = M[i]
    shift = 1.0 - mn
    for i in range(m):
        for j in range(n):
            T[i * width + j] = M[i * n + j] + shift
        T[i * width + n + i] = 1.0
        T[i * width + width - 1] = 1.0
        basis[i] = n + i
    for j in range(n):
        T[m * width + j] = -1.0
    it = 0
    while True:
        if it >= 1000 * (m + n):
            rc = -2
            break
        it += 1
        e = -1
        for j in range(n + m):
            if T[m * width + j] < -PIVOT_EPS:
                e = j
                break
        if e < 0:
            break
        leave = -1
        best = 0.0
        for i in range(m):
            piv = T[i * width + e]
            if piv > PIVOT_EPS:
                r = T[i * width + width - 1] / piv
                tie = PIVOT_EPS * (1.0 + fabs(best))
                if leave < 0 or r < best - tie:
                    leave = i
                    best = r
                elif r <= best + tie and basis[i] < basis[leave]:
                    leave = i
                    best = fmin(best, r)
        if leave < 0:
            rc = -3
            break
        piv = T[leave * width + e]
        for j in range(width):
            T[leave * width + j] /= piv
        for i in range(m + 1):
            if i != leave:
                f = T[i * width + e]
                if f != 0.0:
                    for j in range(width):
                        T[i * width + j] -= f * T[leave * width + j]
                    T[i * width + e] = 0.0
        T[leave * width + e] = 1.0
        basis[leave] = e
    if rc == 0:
        for j in range(n):
            col[j] = 0.0
        for i in range(m):
            if basis[i] < n:
                col[basis[i]] = fmax(T[i * width + width - 1], 0.0)
        sx = 0.0
        sy = 0.0
        for j in range(n):
            sx += col[j]
        for i in range(m):
            row[i] = fmax(T[m * width + n + i], 0.0)
            sy += row[i]
        for j in range(n):
            col[j] /= sx
        for i in range(m):
            row[i] /= sy
        v = 0.0
        for i in range(m):
            f = 0.0
            for j in range(n):
                f += M[i * n + j] * col[j]
            v += row[i] * f
        value[0] = v
    free(T)
    free(basis)
    return rc


cdef int _leaf(const Ctx* c, const Atom* at, int n, double z, double* out) noexcept nogil:
    cdef int i, j
    cdef double acc
    for j in range(c.J):
        acc = 0.0
        for i in range(n):
            acc += at[i].w * _u(c.ukind, c.uparam, at[i].s + z * c.consts[j])
        out[j] = acc
    return 0


cdef int _terminal(const Ctx* c, int x, const Atom* at, int n, double z,
                   const int* A, int nA, const int* B, int nB, double* M) noexcept nogil:
    # M laid out [j][ia][ib]
    cdef int i, j, ia, ib
    cdef long base
    cdef double acc, sh
    for j in range(c.J):
        for ia in range(nA):
            for ib in range(nB):
                acc = 0.0
                for i in range(n):
                    base = ((x * c.ny + at[i].y) * c.na + A[ia]) * c.nb + B[ib]
                    sh = at[i].s + z * c.cost[base] + c.beta * z * c.consts[j]
                    acc += at[i].w * _u(c.ukind, c.uparam, sh)
                M[(j * nA + ia) * nB + ib] = acc
    return 0


cdef int _node(Ctx* c, int x, const Atom* at, int n, double z, int H, double* out) noexcept nogil:
    """Fill out[h*J + j] for h = 0..H. Returns 0, or -1 budget, -2 alloc/solver failure."""
    cdef int J = c.J
    cdef int nA = 0, nB = 0, ia, ib, a, b, xn, i, h, j, cn, rc = 0
    cdef int A[64]
    cdef int B[64]
    cdef double* M = NULL
    cdef double* qrow = NULL
    cdef double* cv = NULL
    cdef double* rowbuf = NULL
    cdef double* colbuf = NULL
    cdef Atom* child = NULL
    cdef long base
    cdef double d, v, q
    c.nodes += 1
    if c.nodes > c.budget:
        return -1
    _leaf(c, at, n, z, out)
    if H == 0:
        return 0
    for a in range(c.na):
        if c.adm1[x * c.na + a]:
            A[nA] = a
            nA += 1
    for b in range(c.nb):
        if c.adm2[x * c.nb + b]:
            B[nB] = b
            nB += 1
    M = <double*> calloc(H * J * nA * nB, sizeof(double))
    rowbuf = <double*> malloc(nA * sizeof(double))
    colbuf = <double*> malloc(nB * sizeof(double))
    if M == NULL or rowbuf == NULL or colbuf == NULL:
        rc = -2
    elif H == 1:
        _terminal(c, x, at, n, z, A, nA, B, nB, M)
    else:
        qrow = <double*> malloc(c.nx * sizeof(double))
        cv = <double*> malloc(H * J * sizeof(double))
        child = <Atom*> malloc((n * c.ny + 1) * sizeof(Atom))
        if qrow == NULL or cv == NULL or child == NULL:
            rc = -2
        else:
            for ia in range(nA):
                if rc != 0:
                    break
                for ib in range(nB):
                    if rc != 0:
                        break
                    for xn in range(c.nx):
                        qrow[xn] = 0.0
                    for i in range(n):
                        base = ((x * c.ny + at[i].y) * c.na + A[ia]) * c.nb + B[ib]
                        for xn in range(c.nx):
                            qrow[xn] += at[i].w * c.qx[base * c.nx + xn]
                    for xn in range(c.nx):
                        q = qrow[xn]
                        if q > 0.0:
                            cn = _phi(c, x, A[ia], B[ib], xn, at, n, z, child, &d)
                            rc = _node(c, xn, child, cn, c.beta * z, H - 1, cv)
                            if rc != 0:
                                break
                            for h in range(H):
                                for j in range(J):
                                    M[((h * J + j) * nA + ia) * nB + ib] += q * cv[h * J + j]
    if rc == 0:
        for h in range(1, H + 1):
            for j in range(J):
                if _simplex(&M[((h - 1) * J + j) * nA * nB], nA, nB, rowbuf, colbuf, &v) != 0:
                    rc = -2
                    break
                out[h * J + j] = v
            if rc != 0:
                break
    free(M)
    free(qrow)
    free(cv)
    free(child)
    free(rowbuf)
    free(colbuf)
    return rc


cdef Atom* _pack(y, s, w, int* n_out) except NULL:
    cdef const cnp.int64_t[::1] yv = np.ascontiguousarray(y, dtype=np.int64)
    cdef const double[::1] sv = np.ascontiguousarray(s, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef int n = yv.shape[0], i
    cdef Atom* at = <Atom*> malloc((n + 1) * sizeof(Atom))
    if at == NULL:
        raise MemoryError()
    for i in range(n):
        at[i].y = yv[i]
        at[i].s = sv[i]
        at[i].w = wv[i]
    n_out[0] = n
    return at


cdef tuple _unpack(const Atom* at, int n):
    y = np.empty(n, dtype=np.int64)
    s = np.empty(n, dtype=np.float64)
    w = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] yv = y
    cdef double[::1] sv = s
    cdef double[::1] wv = w
    cdef int i
    for i in range(n):
        yv[i] = at[i].y
        sv[i] = at[i].s
        wv[i] = at[i].w
    return y, s, w


cdef void _fill_ctx(Ctx* c, cost, kernel, qx, adm1, adm2):
    c.nx = kernel.shape[0]
    c.ny = kernel.shape[1]
    c.na = kernel.shape[2]
    c.nb = kernel.shape[3]
    c.cost = <const double*> cnp.PyArray_DATA(cost)
    c.kern = <const double*> cnp.PyArray_DATA(kernel)
    c.qx = <const double*> cnp.PyArray_DATA(qx)
    c.adm1 = NULL if adm1 is None else <const unsigned char*> cnp.PyArray_DATA(adm1)
    c.adm2 = NULL if adm2 is None else <const unsigned char*> cnp.PyArray_DATA(adm2)


def _contig(arr, dtype):
    arr = np.asarray(arr, dtype=dtype)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


def canonicalize(y, s, w, double tol):
    cdef int n
    cdef Atom* at = _pack(y, s, w, &n)
    n = _canon(at, n, tol)
    try:
        return _unpack(at, n)
    finally:
        free(at)


def phi_update(cost, kernel, qx, y, s, w, int x, int a, int b, int xn, double z, double tol):
    cdef Ctx c
    cdef int n, m
    cdef double d = 0.0
    cost = _contig(cost, np.float64)
    kernel = _contig(kernel, np.float64)
    qx = _contig(qx, np.float64)
    _fill_ctx(&c, cost, kernel, qx, None, None)
    c.tol = tol
    cdef Atom* at = _pack(y, s, w, &n)
    cdef Atom* out = <Atom*> malloc((n * c.ny + 1) * sizeof(Atom))
    if out == NULL:
        free(at)
        raise MemoryError()
    m = _phi(&c, x, a, b, xn, at, n, z, out, &d)
    try:
        y2, s2, w2 = _unpack(out, m)
        return y2, s2, w2, d
    finally:
        free(at)
        free(out)


def solve_game(M):
    M = _contig(M, np.float64)
    if M.ndim != 2:
        raise ValueError("payoff matrix must be 2-D")
    cdef int m = M.shape[0], n = M.shape[1], rc
    cdef double v = 0.0
    row = np.empty(m)
    col = np.empty(n)
    rc = _simplex(<const double*> cnp.PyArray_DATA(M), m, n,
                  <double*> cnp.PyArray_DATA(row), <double*> cnp.PyArray_DATA(col), &v)
    if rc == -1:
        raise MemoryError()
    if rc != 0:
        raise RuntimeError("simplex failed")
    return v, row, col


def terminal_payoffs(cost, adm1, adm2, int ukind, double uparam, double beta, consts,
                     int x, y, s, w, double z):
    cdef Ctx c
    cdef int n, nA = 0, nB = 0, i
    cdef int A[64]
    cdef int B[64]
    cost = _contig(cost, np.float64)
    adm1 = _contig(adm1, np.uint8)
    adm2 = _contig(adm2, np.uint8)
    consts = _contig(consts, np.float64)
    c.ny = cost.shape[1]
    c.na = cost.shape[2]
    c.nb = cost.shape[3]
    c.cost = <const double*> cnp.PyArray_DATA(cost)
    c.beta = beta
    c.ukind = ukind
    c.uparam = uparam
    c.J = consts.shape[0]
    c.consts = <const double*> cnp.PyArray_DATA(consts)
    for i in range(c.na):
        if adm1[x, i]:
            A[nA] = i
            nA += 1
    for i in range(c.nb):
        if adm2[x, i]:
            B[nB] = i
            nB += 1
    out = np.zeros((c.J, nA, nB))
    cdef Atom* at = _pack(y, s, w, &n)
    _terminal(&c, x, at, n, z, A, nA, B, nB, <double*> cnp.PyArray_DATA(out))
    free(at)
    return out


def horizon_values(cost, kernel, qx, adm1, adm2, double beta, int ukind, double uparam, consts,
                   int x, y, s, w, double z, int H, double tol, long budget):
    cdef Ctx c
    cdef int n, rc
    cost = _contig(cost, np.float64)
    kernel = _contig(kernel, np.float64)
    qx = _contig(qx, np.float64)
    adm1 = _contig(adm1, np.uint8)
    adm2 = _contig(adm2, np.uint8)
    consts = _contig(consts, np.float64)
    if adm1.shape[1] > 64 or adm2.shape[1] > 64:
        raise ValueError("compiled kernel supports at most 64 actions per player")
    _fill_ctx(&c, cost, kernel, qx, adm1, adm2)
    c.beta = beta
    c.ukind = ukind
    c.uparam = uparam
    c.J = consts.shape[0]
    c.consts = <const double*> cnp.PyArray_DATA(consts)
    c.tol = tol
    c.nodes = 0
    c.budget = budget
    out = np.empty((H + 1, c.J))
    cdef double* outp = <double*> cnp.PyArray_DATA(out)
    cdef Atom* at = _pack(y, s, w, &n)
    with nogil:
        rc = _node(&c, x, at, n, z, H, outp)
    free(at)
    if rc == -1:
        raise NodeBudgetExceeded("node budget exceeded", nodes=c.nodes)
    if rc != 0:
        raise RuntimeError("horizon backup failed (allocation or simplex failure)")
    return out, c.nodes
