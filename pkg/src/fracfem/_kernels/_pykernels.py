"""Pure-Python twin of the compiled kernels.

Same signatures, same status codes, same floating-point recipe; used when the
extension is not built (or forced via ``FRACFEM_BACKEND=python``).  Expect it
to be two to three orders of magnitude slower.
"""
from collections import defaultdict
from math import expm1, gamma, inf, log1p

import numpy as np

EPS_FACE = 1e-12
PAR_TOL = 1e-13
ADV_TOL = 1e-14
CONT_TOL = 1e-10

OK, NOT_INSIDE, STALL, CYCLE, PATTERN_MISS = range(5)


def segment_weights(g, rgam, dn, df):
    if dn <= 0.0:
        p = df ** (-g) / (1.0 - g) * rgam
        return p, -g * p
    rho = (df - dn) / dn
    p = dn ** (-g)
    lg = log1p(rho)
    if rho < 0.25:
        c = 0.5 * g
        rk = rho * rho
        term = c * rk
        G = term
        k = 2
        while abs(term) > 1e-17 * abs(G) and k < 400:
            c = -c * k * (g + k - 1.0) / ((k - 1.0) * (k + 1.0))
            rk *= rho
            k += 1
            term = c * rk
            G += term
    else:
        a = 1.0 - g
        G = g * expm1(a * lg) / a + expm1(-g * lg)
    wf = -p * G / rho * rgam
    wn = p * expm1(-g * lg) * rgam - wf
    return wn, wf


class _Mesh:
    __slots__ = ("dim", "coords", "simp", "inv", "nbr", "v2s_ptr", "v2s_idx", "bnd", "ne")

    def __init__(self, arrays):
        self.coords, self.simp, self.inv, self.nbr, self.v2s_ptr, self.v2s_idx, self.bnd = arrays
        self.dim = self.coords.shape[1]
        self.ne = self.simp.shape[0]


def _interval(m, s, x, axis, dsgn):
    d = m.dim
    inv = m.inv[s]
    diff = [x[a] - m.coords[m.simp[s, 0], a] for a in range(d)]
    bt = [0.0] * (d + 1)
    dt = [0.0] * (d + 1)
    sb = sd = 0.0
    for j in range(d):
        acc = 0.0
        for a in range(d):
            acc += inv[j, a] * diff[a]
        bt[j + 1] = acc
        sb += acc
        dt[j + 1] = dsgn * inv[j, axis]
        sd += dt[j + 1]
    bt[0] = 1.0 - sb
    dt[0] = -sd
    dmax = max(abs(v) for v in dt)
    lo, hi = 0.0, inf
    for j in range(d + 1):
        if abs(dt[j]) <= PAR_TOL * dmax:
            if bt[j] < -EPS_FACE:
                return False, bt, dt, lo, hi
        else:
            r = -bt[j] / dt[j]
            if dt[j] > 0.0:
                lo = max(lo, r)
            else:
                hi = min(hi, r)
    return hi > lo, bt, dt, lo, hi


def _trace(m, e0, x, axis, side, mark, stamp, counter):
    """Returns (status, segments, last_simplex); segments are
    (simplex, r0, r1, k0, k1) tuples."""
    d = m.dim
    dsgn = -1.0 if side == 0 else 1.0
    s = e0
    mark[s] = stamp
    counter[0] += 1
    segs = []
    ok, bt, dt, lo, hi = _interval(m, s, x, axis, dsgn)
    if not ok or lo > CONT_TOL or hi <= ADV_TOL:
        return NOT_INSIDE, segs, s
    r_cur = 0.0
    while True:
        if len(segs) > m.ne:
            return CYCLE, segs, s
        segs.append((s, r_cur, hi,
                     [bt[j] + r_cur * dt[j] for j in range(d + 1)],
                     [bt[j] + hi * dt[j] for j in range(d + 1)]))
        r_cur = hi
        k1 = segs[-1][4]
        zeros = [j for j in range(d + 1) if abs(k1[j]) <= EPS_FACE]
        ent = [int(m.simp[s, j]) for j in range(d + 1) if abs(k1[j]) > EPS_FACE]
        if len(zeros) == 1:
            nb = m.nbr[s, zeros[0]]
            if nb < 0:
                return OK, segs, s
            if mark[nb] != stamp:
                counter[0] += 1
                ok, cbt, cdt, clo, chi = _interval(m, nb, x, axis, dsgn)
                if ok and chi > r_cur + ADV_TOL and clo <= r_cur + CONT_TOL:
                    s, bt, dt, hi = nb, cbt, cdt, chi
                    mark[s] = stamp
                    continue
        if not ent:
            return STALL, segs, s
        vmin = min(ent, key=lambda v: m.v2s_ptr[v + 1] - m.v2s_ptr[v])
        best = None
        bhi = r_cur + ADV_TOL
        for c in m.v2s_idx[m.v2s_ptr[vmin]:m.v2s_ptr[vmin + 1]]:
            if mark[c] == stamp or not all(v in m.simp[c] for v in ent):
                continue
            counter[0] += 1
            ok, cbt, cdt, clo, chi = _interval(m, c, x, axis, dsgn)
            if ok and chi > bhi and clo <= r_cur + CONT_TOL:
                best, bhi, bbt, bdt = c, chi, cbt, cdt
        if best is None:
            for v in ent:
                for c in m.v2s_idx[m.v2s_ptr[v]:m.v2s_ptr[v + 1]]:
                    if mark[c] == stamp:
                        continue
                    counter[0] += 1
                    ok, cbt, cdt, clo, chi = _interval(m, c, x, axis, dsgn)
                    if ok and chi > bhi and clo <= r_cur + CONT_TOL:
                        best, bhi, bbt, bdt = c, chi, cbt, cdt
        if best is not None:
            s, hi, bt, dt = int(best), bhi, bbt, bdt
            mark[s] = stamp
            continue
        if all(m.bnd[v] for v in ent):
            return OK, segs, s
        return STALL, segs, s


def trace(arrays, e0, x, axis, side):
    m = _Mesh(arrays)
    mark = np.zeros(m.ne, dtype=np.int64)
    counter = [0]
    status, segs, last = _trace(m, int(e0), list(x), axis, side, mark, 1, counter)
    n = len(segs)
    simp = np.array([sg[0] for sg in segs], dtype=np.int64)
    r0 = np.array([sg[1] for sg in segs], dtype=float)
    r1 = np.array([sg[2] for sg in segs], dtype=float)
    k0 = np.array([sg[3] for sg in segs], dtype=float).reshape(n, m.dim + 1)
    k1 = np.array([sg[4] for sg in segs], dtype=float).reshape(n, m.dim + 1)
    return status, simp, r0, r1, k0, k1, counter[0], last


def _path_values(m, segs, g, rgam):
    out = {}
    for s, r0, r1, k0, k1 in segs:
        wn, wf = segment_weights(g, rgam, r0, r1)
        for j in range(m.dim + 1):
            v = int(m.simp[s, j])
            out[v] = out.get(v, 0.0) + (wn * k0[j] + wf * k1[j])
    return out


def _classical_values(m, e, axis):
    d = m.dim
    out = {}
    g0 = 0.0
    for j in range(1, d + 1):
        gj = m.inv[e, j - 1, axis]
        g0 -= gj
        out[int(m.simp[e, j])] = gj
    out[int(m.simp[e, 0])] = g0
    return out


def assemble_chunk(arrays, absdet, e_begin, e_end, qbary, qweight, coef,
                   t_axis, t_sign, t_trial_g, t_trial_key, t_test_g, t_test_key,
                   path_keys, dof, indptr, indices, data, mode):
    m = _Mesh(arrays)
    d = m.dim
    nfree = len(indptr) - 1
    mark = np.zeros(m.ne, dtype=np.int64)
    counter = [0]
    stamp = 0
    hmap = defaultdict(float)
    rg_trial = [1.0 / gamma(1.0 - g) if k >= 0 else 0.0 for g, k in zip(t_trial_g, t_trial_key)]
    rg_test = [1.0 / gamma(1.0 - g) if k >= 0 else 0.0 for g, k in zip(t_test_g, t_test_key)]
    for e in range(e_begin, e_end):
        verts = m.coords[m.simp[e]]
        for q in range(len(qweight)):
            x = [float(sum(qbary[q, j] * verts[j, a] for j in range(d + 1))) for a in range(d)]
            wq = qweight[q] * absdet[e]
            paths = []
            for axis, side in path_keys:
                stamp += 1
                status, segs, last = _trace(m, e, x, int(axis), int(side), mark, stamp, counter)
                if status != OK:
                    return status, last, counter[0], None
                paths.append(segs)
            for t in range(len(t_axis)):
                cval = coef[e, q, t]
                if cval == 0.0:
                    continue
                if t_trial_key[t] >= 0:
                    uvals = _path_values(m, paths[t_trial_key[t]], t_trial_g[t], rg_trial[t])
                else:
                    uvals = _classical_values(m, e, int(t_axis[t]))
                if t_test_key[t] >= 0:
                    vvals = _path_values(m, paths[t_test_key[t]], t_test_g[t], rg_test[t])
                else:
                    vvals = _classical_values(m, e, int(t_axis[t]))
                base = wq * cval * t_sign[t]
                for k, tv in vvals.items():
                    row = dof[k]
                    if row < 0 or tv == 0.0:
                        continue
                    lo, hi = indptr[row], indptr[row + 1]
                    for l, uv in uvals.items():
                        col = dof[l]
                        if col < 0 or uv == 0.0:
                            continue
                        if mode == 0:
                            pos = lo + np.searchsorted(indices[lo:hi], col)
                            if pos >= hi or indices[pos] != col:
                                return PATTERN_MISS, row * nfree + col, counter[0], None
                            data[pos] += base * tv * uv
                        else:
                            hmap[row * nfree + col] += base * tv * uv
    coo = None
    if mode == 1:
        coo = (np.fromiter(hmap.keys(), dtype=np.int64, count=len(hmap)),
               np.fromiter(hmap.values(), dtype=float, count=len(hmap)))
    return OK, -1, counter[0], coo


def pattern_rows(lo, hi, axes, order, skey, maxw, adj_ptr, adj_idx):
    n, d = lo.shape
    indptr = np.zeros(n + 1, dtype=np.int64)
    chunks = []
    for v in range(n):
        parts = [adj_idx[adj_ptr[v]:adj_ptr[v + 1]]]
        for i in axes:
            c = 1 if i == 0 else 0
            start = np.searchsorted(skey[c], lo[v, c] - maxw[c], side="left")
            stop = np.searchsorted(skey[c], hi[v, c], side="left")
            cand = order[c, start:stop]
            perp = [a for a in range(d) if a != i]
            ok = ((hi[cand][:, perp] > lo[v, perp]) & (lo[cand][:, perp] < hi[v, perp])).all(axis=1)
            parts.append(cand[ok])
        row = np.unique(np.concatenate(parts))
        chunks.append(row)
        indptr[v + 1] = indptr[v] + len(row)
    indices = np.concatenate(chunks).astype(np.int64) if chunks else np.zeros(0, np.int64)
    return indptr, indices
