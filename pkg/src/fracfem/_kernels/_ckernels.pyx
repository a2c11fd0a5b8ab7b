# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled inner loops: axis-ray path tracing, segment kernel weights and
pattern-locked (or hash-map) scatter-add of element contributions."""

from libc.math cimport fabs, pow, log1p, expm1, INFINITY
from libc.stdlib cimport malloc, realloc, free
from libcpp.unordered_map cimport unordered_map
from libcpp.vector cimport vector
from libcpp.utility cimport pair
from libcpp.algorithm cimport sort as cpp_sort

import numpy as np
from math import gamma as _gamma

ctypedef long long idx_t

DEF EPS_FACE = 1e-12
DEF PAR_TOL = 1e-13
DEF ADV_TOL = 1e-14
DEF CONT_TOL = 1e-10
DEF MAXV = 4

# status codes shared with the pure-Python backend
DEF OK = 0
DEF NOT_INSIDE = 1
DEF STALL = 2
DEF CYCLE = 3
DEF PATTERN_MISS = 4

cdef struct MeshC:
    int dim
    idx_t nv
    idx_t ne
    double* coords
    idx_t* simp
    double* inv
    idx_t* nbr
    idx_t* v2s_ptr
    idx_t* v2s_idx
    unsigned char* bnd

cdef struct PathBuf:
    int n
    int cap
    idx_t* simp
    double* r0
    double* r1
    double* k0
    double* k1

cdef struct Work:
    idx_t* mark
    idx_t stamp
    idx_t examined
    idx_t last_simplex


cdef int _path_init(PathBuf* pb, int cap) noexcept nogil:
    pb.n = 0
    pb.cap = cap
    pb.simp = <idx_t*> malloc(cap * sizeof(idx_t))
    pb.r0 = <double*> malloc(cap * sizeof(double))
    pb.r1 = <double*> malloc(cap * sizeof(double))
    pb.k0 = <double*> malloc(cap * MAXV * sizeof(double))
    pb.k1 = <double*> malloc(cap * MAXV * sizeof(double))
    return 0


cdef void _path_free(PathBuf* pb) noexcept nogil:
    free(pb.simp)
    free(pb.r0)
    free(pb.r1)
    free(pb.k0)
    free(pb.k1)


cdef int _path_grow(PathBuf* pb) noexcept nogil:
    cdef int cap = pb.cap * 2
    pb.simp = <idx_t*> realloc(pb.simp, cap * sizeof(idx_t))
    pb.r0 = <double*> realloc(pb.r0, cap * sizeof(double))
    pb.r1 = <double*> realloc(pb.r1, cap * sizeof(double))
    pb.k0 = <double*> realloc(pb.k0, cap * MAXV * sizeof(double))
    pb.k1 = <double*> realloc(pb.k1, cap * MAXV * sizeof(double))
    pb.cap = cap
    return 0


cdef inline void _weights(double g, double rgam, double dn, double df,
                          double* wn, double* wf) noexcept nogil:
    """Weights of the near/far endpoint basis values for one segment.

    The segment spans distances [dn, df] from the evaluation point; the
    terminal segment has dn == 0.  ``rgam`` is 1/Gamma(1-g).
    """
    cdef double p, rho, G, c, rk, term, l, a
    cdef int k
    if dn <= 0.0:
        p = pow(df, -g) / (1.0 - g) * rgam
        wn[0] = p
        wf[0] = -g * p
        return
    rho = (df - dn) / dn
    p = pow(dn, -g)
    l = log1p(rho)
    if rho < 0.25:
        c = 0.5 * g
        rk = rho * rho
        term = c * rk
        G = term
        k = 2
        while fabs(term) > 1e-17 * fabs(G) and k < 400:
            c = -c * k * (g + k - 1.0) / ((k - 1.0) * (k + 1.0))
            rk = rk * rho
            k += 1
            term = c * rk
            G += term
    else:
        a = 1.0 - g
        G = g * expm1(a * l) / a + expm1(-g * l)
    wf[0] = -p * G / rho * rgam
    wn[0] = (p * expm1(-g * l)) * rgam - wf[0]


def segment_weights(double g, double rgam, double dn, double df):
    cdef double wn, wf
    _weights(g, rgam, dn, df, &wn, &wf)
    return wn, wf


cdef inline int _interval(MeshC* m, idx_t s, const double* x, int axis,
                          double dsgn, double* bt, double* dt,
                          double* lo, double* hi) noexcept nogil:
    cdef int d = m.dim, j, a
    cdef idx_t v0 = m.simp[s * (d + 1)]
    cdef double diff[3]
    cdef double sb = 0.0, sd = 0.0, acc, dmax = 0.0, r
    cdef double* inv = m.inv + s * d * d
    for a in range(d):
        diff[a] = x[a] - m.coords[v0 * d + a]
    for j in range(d):
        acc = 0.0
        for a in range(d):
            acc += inv[j * d + a] * diff[a]
        bt[j + 1] = acc
        sb += acc
        dt[j + 1] = dsgn * inv[j * d + axis]
        sd += dt[j + 1]
    bt[0] = 1.0 - sb
    dt[0] = -sd
    for j in range(d + 1):
        if fabs(dt[j]) > dmax:
            dmax = fabs(dt[j])
    lo[0] = 0.0
    hi[0] = INFINITY
    for j in range(d + 1):
        if fabs(dt[j]) <= PAR_TOL * dmax:
            if bt[j] < -EPS_FACE:
                return 0
        else:
            r = -bt[j] / dt[j]
            if dt[j] > 0.0:
                if r > lo[0]:
                    lo[0] = r
            else:
                if r < hi[0]:
                    hi[0] = r
    return 1 if hi[0] > lo[0] else 0


cdef inline int _contains_all(MeshC* m, idx_t s, idx_t* verts, int nverts) noexcept nogil:
    cdef int d = m.dim, a, b, found
    for a in range(nverts):
        found = 0
        for b in range(d + 1):
            if m.simp[s * (d + 1) + b] == verts[a]:
                found = 1
                break
        if not found:
            return 0
    return 1


cdef int _trace(MeshC* m, idx_t e0, const double* x, int axis, int side,
                PathBuf* pb, Work* w) noexcept nogil:
    cdef int d = m.dim, j, a, nz, zc, nent, ok, best_found
    cdef double dsgn = -1.0 if side == 0 else 1.0
    cdef double bt[4]
    cdef double dt[4]
    cdef double cbt[4]
    cdef double cdt[4]
    cdef double bbt[4]
    cdef double bdt[4]
    cdef double lo, hi, clo, chi, bhi, r_cur, k1v
    cdef idx_t s = e0, nb, c, vmin, p, best
    cdef idx_t ent[4]
    cdef int on_bnd
    pb.n = 0
    w.stamp += 1
    w.mark[s] = w.stamp
    w.examined += 1
    w.last_simplex = s
    ok = _interval(m, s, x, axis, dsgn, bt, dt, &lo, &hi)
    if not ok or lo > CONT_TOL or hi <= ADV_TOL:
        return NOT_INSIDE
    r_cur = 0.0
    while True:
        if pb.n >= pb.cap:
            _path_grow(pb)
        if pb.n > m.ne:
            return CYCLE
        pb.simp[pb.n] = s
        pb.r0[pb.n] = r_cur
        pb.r1[pb.n] = hi
        for j in range(d + 1):
            pb.k0[pb.n * MAXV + j] = bt[j] + r_cur * dt[j]
            pb.k1[pb.n * MAXV + j] = bt[j] + hi * dt[j]
        pb.n += 1
        r_cur = hi
        w.last_simplex = s
        nz = 0
        zc = -1
        nent = 0
        for j in range(d + 1):
            k1v = bt[j] + hi * dt[j]
            if fabs(k1v) <= EPS_FACE:
                nz += 1
                zc = j
            else:
                ent[nent] = m.simp[s * (d + 1) + j]
                nent += 1
        if nz == 1:
            nb = m.nbr[s * (d + 1) + zc]
            if nb < 0:
                return OK
            if w.mark[nb] != w.stamp:
                w.examined += 1
                ok = _interval(m, nb, x, axis, dsgn, cbt, cdt, &clo, &chi)
                if ok and chi > r_cur + ADV_TOL and clo <= r_cur + CONT_TOL:
                    s = nb
                    w.mark[s] = w.stamp
                    hi = chi
                    for j in range(d + 1):
                        bt[j] = cbt[j]
                        dt[j] = cdt[j]
                    continue
        if nent == 0:
            return STALL
        # low-dimensional exit (or a face exit whose neighbour did not
        # advance): scan every simplex incident to the exit entity
        vmin = ent[0]
        for j in range(1, nent):
            if (m.v2s_ptr[ent[j] + 1] - m.v2s_ptr[ent[j]]) < (m.v2s_ptr[vmin + 1] - m.v2s_ptr[vmin]):
                vmin = ent[j]
        best_found = 0
        best = -1
        bhi = r_cur + ADV_TOL
        for p in range(m.v2s_ptr[vmin], m.v2s_ptr[vmin + 1]):
            c = m.v2s_idx[p]
            if w.mark[c] == w.stamp:
                continue
            if not _contains_all(m, c, ent, nent):
                continue
            w.examined += 1
            ok = _interval(m, c, x, axis, dsgn, cbt, cdt, &clo, &chi)
            if ok and chi > bhi and clo <= r_cur + CONT_TOL:
                best_found = 1
                best = c
                bhi = chi
                for j in range(d + 1):
                    bbt[j] = cbt[j]
                    bdt[j] = cdt[j]
        if not best_found:
            # misclassified exit entity: widen to simplices sharing any vertex
            for a in range(nent):
                for p in range(m.v2s_ptr[ent[a]], m.v2s_ptr[ent[a] + 1]):
                    c = m.v2s_idx[p]
                    if w.mark[c] == w.stamp:
                        continue
                    w.examined += 1
                    ok = _interval(m, c, x, axis, dsgn, cbt, cdt, &clo, &chi)
                    if ok and chi > bhi and clo <= r_cur + CONT_TOL:
                        best_found = 1
                        best = c
                        bhi = chi
                        for j in range(d + 1):
                            bbt[j] = cbt[j]
                            bdt[j] = cdt[j]
        if best_found:
            s = best
            w.mark[s] = w.stamp
            hi = bhi
            for j in range(d + 1):
                bt[j] = bbt[j]
                dt[j] = bdt[j]
            continue
        on_bnd = 1
        for j in range(nent):
            if not m.bnd[ent[j]]:
                on_bnd = 0
                break
        if on_bnd:
            return OK
        return STALL


cdef MeshC _mesh_struct(int dim, const double[:, ::1] coords, const idx_t[:, ::1] simp,
                        const double[:, :, ::1] inv, const idx_t[:, ::1] nbr,
                        const idx_t[::1] v2s_ptr, const idx_t[::1] v2s_idx,
                        const unsigned char[::1] bnd):
    cdef MeshC m
    m.dim = dim
    m.nv = coords.shape[0]
    m.ne = simp.shape[0]
    m.coords = <double*> &coords[0, 0]
    m.simp = <idx_t*> &simp[0, 0]
    m.inv = <double*> &inv[0, 0, 0]
    m.nbr = <idx_t*> &nbr[0, 0]
    m.v2s_ptr = <idx_t*> &v2s_ptr[0]
    m.v2s_idx = <idx_t*> &v2s_idx[0]
    m.bnd = <unsigned char*> &bnd[0]
    return m


def trace(tuple arrays, idx_t e0, const double[::1] x, int axis, int side):
    """Trace one axis path.  Returns (status, simplices, r0, r1, k0, k1,
    examined, last_simplex)."""
    cdef const double[:, ::1] coords = arrays[0]
    cdef MeshC m = _mesh_struct(coords.shape[1], arrays[0], arrays[1], arrays[2],
                                arrays[3], arrays[4], arrays[5], arrays[6])
    cdef PathBuf pb
    cdef Work w
    cdef int status, i, j
    mark = np.zeros(m.ne, dtype=np.int64)
    cdef idx_t[::1] mark_v = mark
    w.mark = &mark_v[0]
    w.stamp = 0
    w.examined = 0
    w.last_simplex = e0
    _path_init(&pb, 64)
    with nogil:
        status = _trace(&m, e0, <double*> &x[0], axis, side, &pb, &w)
    n = pb.n
    simp = np.empty(n, dtype=np.int64)
    r0 = np.empty(n)
    r1 = np.empty(n)
    k0 = np.empty((n, m.dim + 1))
    k1 = np.empty((n, m.dim + 1))
    for i in range(n):
        simp[i] = pb.simp[i]
        r0[i] = pb.r0[i]
        r1[i] = pb.r1[i]
        for j in range(m.dim + 1):
            k0[i, j] = pb.k0[i * MAXV + j]
            k1[i, j] = pb.k1[i * MAXV + j]
    _path_free(&pb)
    return status, simp, r0, r1, k0, k1, w.examined, w.last_simplex


cdef inline int _scatter(idx_t* indptr, idx_t* indices, double* data,
                         idx_t row, idx_t col, double val) noexcept nogil:
    cdef idx_t lo = indptr[row], hi = indptr[row + 1] - 1, mid
    while lo <= hi:
        mid = (lo + hi) >> 1
        if indices[mid] < col:
            lo = mid + 1
        elif indices[mid] > col:
            hi = mid - 1
        else:
            data[mid] += val
            return 0
    return 1


cdef inline int _scatter_sorted(idx_t* indptr, idx_t* indices, double* data, idx_t row,
                                vector[pair[idx_t, double]]& cols, double scale,
                                idx_t* miss) noexcept nogil:
    """Add scale*val at every (row, col) of ``cols`` (sorted by col).  The
    search window shrinks from the left as columns increase."""
    cdef idx_t lo = indptr[row], end = indptr[row + 1], hi, mid, col
    cdef size_t b
    for b in range(cols.size()):
        col = cols[b].first
        hi = end
        while lo < hi:
            mid = (lo + hi) >> 1
            if indices[mid] < col:
                lo = mid + 1
            else:
                hi = mid
        if lo >= end or indices[lo] != col:
            miss[0] = col
            return 1
        data[lo] += scale * cols[b].second
        lo += 1
    return 0


cdef inline void _accumulate_path(MeshC* m, PathBuf* pb, double g, double rgam,
                                  double* acc, idx_t* tag, idx_t curtag,
                                  idx_t* touched, int* ntouched) noexcept nogil:
    cdef int d = m.dim, mm, j
    cdef double wn, wf, val
    cdef idx_t v
    for mm in range(pb.n):
        _weights(g, rgam, pb.r0[mm], pb.r1[mm], &wn, &wf)
        for j in range(d + 1):
            val = wn * pb.k0[mm * MAXV + j] + wf * pb.k1[mm * MAXV + j]
            v = m.simp[pb.simp[mm] * (d + 1) + j]
            if tag[v] != curtag:
                tag[v] = curtag
                acc[v] = 0.0
                touched[ntouched[0]] = v
                ntouched[0] += 1
            acc[v] += val


cdef inline void _accumulate_classical(MeshC* m, idx_t e, int axis,
                                       double* acc, idx_t* tag, idx_t curtag,
                                       idx_t* touched, int* ntouched) noexcept nogil:
    cdef int d = m.dim, j
    cdef double g0 = 0.0, gj
    cdef idx_t v
    for j in range(d + 1):
        if j == 0:
            continue
        gj = m.inv[e * d * d + (j - 1) * d + axis]
        g0 -= gj
        v = m.simp[e * (d + 1) + j]
        tag[v] = curtag
        acc[v] = gj
        touched[ntouched[0]] = v
        ntouched[0] += 1
    v = m.simp[e * (d + 1)]
    tag[v] = curtag
    acc[v] = g0
    touched[ntouched[0]] = v
    ntouched[0] += 1


def assemble_chunk(tuple arrays, const double[::1] absdet, idx_t e_begin, idx_t e_end,
                   const double[:, ::1] qbary, const double[::1] qweight,
                   const double[:, :, ::1] coef,
                   const idx_t[::1] t_axis, const double[::1] t_sign,
                   const double[::1] t_trial_g, const idx_t[::1] t_trial_key,
                   const double[::1] t_test_g, const idx_t[::1] t_test_key,
                   const idx_t[:, ::1] path_keys,
                   const idx_t[::1] dof, const idx_t[::1] indptr, const idx_t[::1] indices,
                   double[::1] data, int mode):
    """Assemble elements [e_begin, e_end) into ``data`` (mode 0, pattern-locked
    CSR) or into a hash map returned as COO triplets (mode 1).

    Returns (status, info, examined, coo) where coo is None in mode 0.
    """
    cdef const double[:, ::1] coords = arrays[0]
    cdef MeshC m = _mesh_struct(coords.shape[1], arrays[0], arrays[1], arrays[2],
                                arrays[3], arrays[4], arrays[5], arrays[6])
    cdef int d = m.dim, nq = qbary.shape[0], nt = t_axis.shape[0]
    cdef int npk = path_keys.shape[0]
    cdef int q, t, j, pk, a, b, status = OK, ntr, nte
    cdef idx_t hpos = 0
    cdef idx_t e, curtag = 0, row, col, info = -1, nfree = indptr.shape[0] - 1
    cdef double x[3]
    cdef double wq, cval, tv, base, g
    cdef PathBuf* paths = <PathBuf*> malloc(max(npk, 1) * sizeof(PathBuf))
    cdef Work w
    cdef unordered_map[idx_t, double] hmap
    cdef vector[pair[idx_t, double]] trial
    mark = np.zeros(m.ne, dtype=np.int64)
    acc_u = np.zeros(m.nv)
    acc_v = np.zeros(m.nv)
    tag_u = np.zeros(m.nv, dtype=np.int64)
    tag_v = np.zeros(m.nv, dtype=np.int64)
    touched_u = np.zeros(m.nv, dtype=np.int64)
    touched_v = np.zeros(m.nv, dtype=np.int64)
    rgam_trial = np.zeros(nt)
    rgam_test = np.zeros(nt)
    for t in range(nt):
        if t_trial_key[t] >= 0:
            rgam_trial[t] = 1.0 / _gamma(1.0 - t_trial_g[t])
        if t_test_key[t] >= 0:
            rgam_test[t] = 1.0 / _gamma(1.0 - t_test_g[t])
    cdef idx_t[::1] mark_v = mark
    cdef double[::1] accu = acc_u
    cdef double[::1] accv = acc_v
    cdef idx_t[::1] tagu = tag_u
    cdef idx_t[::1] tagv = tag_v
    cdef idx_t[::1] tu = touched_u
    cdef idx_t[::1] tvv = touched_v
    cdef double[::1] rgt = rgam_trial
    cdef double[::1] rgs = rgam_test
    cdef idx_t* indptr_p = <idx_t*> &indptr[0]
    cdef idx_t* indices_p = <idx_t*> &indices[0] if indices.shape[0] > 0 else NULL
    cdef double* data_p = &data[0] if data.shape[0] > 0 else NULL
    w.mark = &mark_v[0]
    w.stamp = 0
    w.examined = 0
    w.last_simplex = -1
    for pk in range(npk):
        _path_init(&paths[pk], 64)
    with nogil:
        for e in range(e_begin, e_end):
            for q in range(nq):
                for a in range(d):
                    x[a] = 0.0
                    for j in range(d + 1):
                        x[a] += qbary[q, j] * m.coords[m.simp[e * (d + 1) + j] * d + a]
                wq = qweight[q] * absdet[e]
                for pk in range(npk):
                    status = _trace(&m, e, x, <int> path_keys[pk, 0],
                                    <int> path_keys[pk, 1], &paths[pk], &w)
                    if status != OK:
                        info = w.last_simplex
                        break
                if status != OK:
                    break
                for t in range(nt):
                    cval = coef[e, q, t]
                    if cval == 0.0:
                        continue
                    curtag += 1
                    ntr = 0
                    nte = 0
                    if t_trial_key[t] >= 0:
                        _accumulate_path(&m, &paths[t_trial_key[t]], t_trial_g[t], rgt[t],
                                         &accu[0], &tagu[0], curtag, &tu[0], &ntr)
                    else:
                        _accumulate_classical(&m, e, <int> t_axis[t], &accu[0], &tagu[0],
                                              curtag, &tu[0], &ntr)
                    if t_test_key[t] >= 0:
                        _accumulate_path(&m, &paths[t_test_key[t]], t_test_g[t], rgs[t],
                                         &accv[0], &tagv[0], curtag, &tvv[0], &nte)
                    else:
                        _accumulate_classical(&m, e, <int> t_axis[t], &accv[0], &tagv[0],
                                              curtag, &tvv[0], &nte)
                    base = wq * cval * t_sign[t]
                    # free trial columns with nonzero value, sorted by column
                    trial.clear()
                    for b in range(ntr):
                        col = dof[tu[b]]
                        g = accu[tu[b]]
                        if col >= 0 and g != 0.0:
                            trial.push_back(pair[idx_t, double](col, g))
                    if mode == 0:
                        cpp_sort(trial.begin(), trial.end())
                    for a in range(nte):
                        row = dof[tvv[a]]
                        tv = accv[tvv[a]]
                        if row < 0 or tv == 0.0:
                            continue
                        if mode == 0:
                            if _scatter_sorted(indptr_p, indices_p, data_p, row, trial, base * tv, &col):
                                status = PATTERN_MISS
                                info = row * nfree + col
                                break
                        else:
                            for b in range(<int> trial.size()):
                                hmap[row * nfree + trial[b].first] += base * tv * trial[b].second
                    if status != OK:
                        break
                if status != OK:
                    break
            if status != OK:
                break
    for pk in range(npk):
        _path_free(&paths[pk])
    free(paths)
    coo = None
    if mode == 1 and status == OK:
        keys = np.empty(hmap.size(), dtype=np.int64)
        vals = np.empty(hmap.size())
        for kv in hmap:
            keys[hpos] = kv.first
            vals[hpos] = kv.second
            hpos += 1
        coo = (keys, vals)
    return status, info, w.examined, coo




cdef inline idx_t _lower_bound(const double* a, idx_t n, double x) noexcept nogil:
    cdef idx_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def pattern_rows(const double[:, ::1] lo, const double[:, ::1] hi, const idx_t[::1] axes,
                 const idx_t[:, ::1] order, const double[:, ::1] skey, const double[::1] maxw,
                 const idx_t[::1] adj_ptr, const idx_t[::1] adj_idx):
    """Rows of the predicted pattern.

    Column u enters row v if u is adjacent to v, or if for some axis i in
    ``axes`` the boxes [lo, hi] of u and v overlap strictly in every
    coordinate other than i.  ``order[c]`` sorts the boxes by lo[:, c],
    ``skey[c]`` holds the sorted keys and ``maxw[c]`` the largest width.
    """
    cdef idx_t n = lo.shape[0], v, u, p, start, stop
    cdef int d = lo.shape[1], na = axes.shape[0], k, i, c, a, ok
    cdef vector[idx_t] row
    cdef vector[idx_t] cols
    indptr = np.zeros(n + 1, dtype=np.int64)
    tag = np.full(n, -1, dtype=np.int64)
    cdef idx_t[::1] ip = indptr
    cdef idx_t[::1] tg = tag
    with nogil:
        for v in range(n):
            row.clear()
            for p in range(adj_ptr[v], adj_ptr[v + 1]):
                u = adj_idx[p]
                if tg[u] != v:
                    tg[u] = v
                    row.push_back(u)
            for k in range(na):
                i = <int> axes[k]
                c = 1 if i == 0 else 0
                start = _lower_bound(&skey[c, 0], n, lo[v, c] - maxw[c])
                stop = _lower_bound(&skey[c, 0], n, hi[v, c])
                for p in range(start, stop):
                    u = order[c, p]
                    if tg[u] == v:
                        continue
                    ok = 1
                    for a in range(d):
                        if a != i and not (hi[u, a] > lo[v, a] and lo[u, a] < hi[v, a]):
                            ok = 0
                            break
                    if ok:
                        tg[u] = v
                        row.push_back(u)
            cpp_sort(row.begin(), row.end())
            for p in range(<idx_t> row.size()):
                cols.push_back(row[p])
            ip[v + 1] = cols.size()
    indices = np.empty(cols.size(), dtype=np.int64)
    cdef idx_t[::1] ix = indices
    for p in range(<idx_t> cols.size()):
        ix[p] = cols[p]
    return indptr, indices
