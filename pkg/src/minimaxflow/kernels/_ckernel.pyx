# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled closed-loop tick; see ``_pykernel.py`` for the reference version."""

import numpy as np

from libc.math cimport sin, cos, fabs


cdef double _load_residual(const double[::1] delta, const double[::1] P, const double[::1] A,
                           const Py_ssize_t[::1] eu, const Py_ssize_t[::1] ev,
                           const Py_ssize_t[::1] loads, double[::1] inj, double[::1] r) noexcept nogil:
    cdef Py_ssize_t n = P.shape[0], ne = A.shape[0], e, k, v
    cdef double x, norm = 0.0
    for v in range(n):
        inj[v] = 0.0
    for e in range(ne):
        x = A[e] * sin(delta[eu[e]] - delta[ev[e]])
        inj[eu[e]] += x
        inj[ev[e]] -= x
    for k in range(loads.shape[0]):
        v = loads[k]
        r[v] = P[v] - inj[v]
        if fabs(r[v]) > norm:
            norm = fabs(r[v])
    return norm


cdef Py_ssize_t _newton(double[::1] delta, const double[::1] P, const double[::1] A,
                        const Py_ssize_t[::1] eu, const Py_ssize_t[::1] ev,
                        const Py_ssize_t[::1] order, const Py_ssize_t[::1] parent,
                        const Py_ssize_t[::1] parent_edge, double tol, Py_ssize_t maxit,
                        double[::1] history, double[::1] w, double[::1] d, double[::1] rhs,
                        double[::1] dx, double[::1] base, double[::1] inj, double[::1] r,
                        double[::1] r_new) noexcept nogil:
    cdef Py_ssize_t n = P.shape[0], ne = A.shape[0], nl = order.shape[0]
    cdef Py_ssize_t it, e, k, v, p
    cdef double norm, norm_new, c, alpha
    norm = _load_residual(delta, P, A, eu, ev, order, inj, r)
    history[0] = norm
    for it in range(maxit):
        if norm <= tol:
            return it
        for v in range(n):
            d[v] = 0.0
        for e in range(ne):
            w[e] = A[e] * cos(delta[eu[e]] - delta[ev[e]])
            d[eu[e]] += w[e]
            d[ev[e]] += w[e]
        for k in range(nl):
            v = order[k]
            rhs[v] = r[v]
        for k in range(nl):
            v = order[k]
            p = parent[v]
            if p >= 0:
                c = w[parent_edge[v]]
                d[p] -= c * c / d[v]
                rhs[p] += c * rhs[v] / d[v]
        for k in range(nl - 1, -1, -1):
            v = order[k]
            p = parent[v]
            if p >= 0:
                dx[v] = (rhs[v] + w[parent_edge[v]] * dx[p]) / d[v]
            else:
                dx[v] = rhs[v] / d[v]
        for k in range(nl):
            v = order[k]
            base[v] = delta[v]
        alpha = 1.0
        while True:
            for k in range(nl):
                v = order[k]
                delta[v] = base[v] + alpha * dx[v]
            norm_new = _load_residual(delta, P, A, eu, ev, order, inj, r_new)
            if norm_new < norm or norm_new <= tol:
                break
            alpha *= 0.5
            if alpha < 1e-8:
                for k in range(nl):
                    v = order[k]
                    delta[v] = base[v]
                history[it + 1] = norm
                return -1
        for k in range(nl):
            v = order[k]
            r[v] = r_new[v]
        norm = norm_new
        history[it + 1] = norm
    if norm <= tol:
        return maxit
    return -1


def solve_loads(double[::1] delta, const double[::1] P, const double[::1] A,
                const Py_ssize_t[::1] eu, const Py_ssize_t[::1] ev,
                const Py_ssize_t[::1] load_order, const Py_ssize_t[::1] load_parent,
                const Py_ssize_t[::1] load_parent_edge, double tol, Py_ssize_t maxit,
                double[::1] history):
    n = P.shape[0]
    ne = A.shape[0]
    cdef double[::1] w = np.zeros(ne), d = np.zeros(n), rhs = np.zeros(n), dx = np.zeros(n)
    cdef double[::1] base = np.zeros(n), inj = np.zeros(n), r = np.zeros(n), r_new = np.zeros(n)
    return _newton(delta, P, A, eu, ev, load_order, load_parent, load_parent_edge, tol, maxit,
                   history, w, d, rhs, dx, base, inj, r, r_new)


def advance(Py_ssize_t n_ticks, double dt, Py_ssize_t substeps, int mode, double kphi, double kP,
            double kPg, double tol, Py_ssize_t maxit,
            const Py_ssize_t[::1] eu, const Py_ssize_t[::1] ev, const double[::1] A,
            const double[::1] cap, const double[::1] beta_uv, const double[::1] beta_vu,
            const Py_ssize_t[::1] gens, const Py_ssize_t[::1] load_order,
            const Py_ssize_t[::1] load_parent, const Py_ssize_t[::1] load_parent_edge,
            double[::1] delta, double[::1] P, double[::1] D, double[::1] phi,
            const double[::1] lo, const double[::1] hi, Py_ssize_t[::1] gamma,
            Py_ssize_t[::1] zeta, double[::1] history):
    cdef Py_ssize_t n = P.shape[0], ne = A.shape[0], ng = gens.shape[0]
    cdef Py_ssize_t tick, e, k, a, b, i, s, cnt, src, dst, z, done = n_ticks
    cdef double h = dt / substeps, xv, rat, cand, tot, navg, smax, ptil, u, v, avg
    cdef double sign = -1.0 if mode == 2 else 1.0
    cdef bint all_unsat
    cdef double[::1] w = np.zeros(ne), d = np.zeros(n), rhs = np.zeros(n), dx = np.zeros(n)
    cdef double[::1] base = np.zeros(n), inj = np.zeros(n), r = np.zeros(n), r_new = np.zeros(n)
    cdef double[::1] xi = np.zeros(ne), target = np.zeros(n)
    cdef double[::1] newx = np.zeros(ng), ptils = np.zeros(ng)
    cdef double[::1] x = P if mode == 1 else D

    with nogil:
        for tick in range(n_ticks):
            # generator angles: explicit Euler on the droop dynamics
            for i in range(n):
                inj[i] = 0.0
            for e in range(ne):
                xv = A[e] * sin(delta[eu[e]] - delta[ev[e]])
                inj[eu[e]] += xv
                inj[ev[e]] -= xv
            for k in range(ng):
                i = gens[k]
                delta[i] += dt * (P[i] - inj[i]) / D[i]
            if _newton(delta, P, A, eu, ev, load_order, load_parent, load_parent_edge, tol, maxit,
                       history, w, d, rhs, dx, base, inj, r, r_new) < 0:
                done = tick
                break

            # max-downstream-flow estimator on live flows
            for e in range(ne):
                xi[e] = A[e] * sin(delta[eu[e]] - delta[ev[e]])
            for s in range(substeps):
                for i in range(n):
                    target[i] = 0.0
                for e in range(ne):
                    xv = xi[e]
                    if xv > 0:
                        src = eu[e]
                        dst = ev[e]
                        rat = beta_uv[e] * xv / cap[e]
                    elif xv < 0:
                        src = ev[e]
                        dst = eu[e]
                        rat = beta_vu[e] * (-xv) / cap[e]
                    else:
                        continue
                    cand = rat if rat > phi[dst] else phi[dst]
                    if cand > target[src]:
                        target[src] = cand
                for i in range(n):
                    phi[i] -= h * kphi * (phi[i] - target[i])

            if mode == 0:
                continue
            # saturation-aware consensus law on the controlled variable
            all_unsat = True
            avg = 0.0
            for a in range(ng):
                avg += phi[gens[a]]
                if not gamma[gens[a]]:
                    all_unsat = False
            avg /= ng
            for a in range(ng):
                i = gens[a]
                tot = phi[i]
                cnt = 1
                smax = 0.0
                for b in range(ng):
                    if b == a:
                        continue
                    if gamma[gens[b]]:
                        tot += phi[gens[b]]
                        cnt += 1
                    elif phi[gens[b]] > smax:
                        smax = phi[gens[b]]
                navg = tot / cnt
                ptil = sign * (-kP * (phi[i] - navg) - kPg * (navg - smax))
                z = (x[i] <= lo[i] and ptil > 0) or (x[i] >= hi[i] and ptil < 0)
                if all_unsat:
                    u = -sign * kP * (phi[i] - avg)
                elif gamma[i] or z:
                    u = ptil
                else:
                    u = 0.0
                v = x[i] + dt * u
                if v < lo[i]:
                    v = lo[i]
                if v > hi[i]:
                    v = hi[i]
                newx[a] = v
                ptils[a] = ptil
            for a in range(ng):
                i = gens[a]
                v = newx[a]
                x[i] = v
                gamma[i] = lo[i] < v and v < hi[i]
                zeta[i] = (v <= lo[i] and ptils[a] > 0) or (v >= hi[i] and ptils[a] < 0)
    return done
