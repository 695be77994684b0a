"""Reference implementation of the closed-loop tick, numpy + plain loops.

Mirrors ``_ckernel.pyx`` operation for operation; the compiled version is a
straight port of this file. Arrays are mutated in place.

Conventions: edge ``e`` joins ``eu[e] -> ev[e]`` (canonical orientation),
``xi[e] = A[e] * sin(delta[eu] - delta[ev])`` is the flow along it.
``mode`` is 0 (no control), 1 (control the generator power P) or 2 (control
the droop coefficient D, with the law's sign reversed).
"""

import numpy as np


def _injections(delta, A, eu, ev, n):
    xi = A * np.sin(delta[eu] - delta[ev])
    return xi, np.bincount(eu, xi, n) - np.bincount(ev, xi, n)


def _load_residual(delta, P, A, eu, ev, loads):
    _, inj = _injections(delta, A, eu, ev, P.size)
    r = P - inj
    return r, (np.max(np.abs(r[loads])) if loads.size else 0.0)


def solve_loads(delta, P, A, eu, ev, load_order, load_parent, load_parent_edge, tol, maxit, history):
    """Damped Newton on the load balance equations, tree-structured solve.

    Returns the number of iterations used, or -1 on failure. Residual norms
    are written to ``history`` (length >= maxit + 1).
    """
    n = P.size
    loads = load_order
    r, norm = _load_residual(delta, P, A, eu, ev, loads)
    history[0] = norm
    for it in range(maxit):
        if norm <= tol:
            return it
        w = A * np.cos(delta[eu] - delta[ev])
        d = np.bincount(eu, w, n) + np.bincount(ev, w, n)
        rhs = r.copy()
        for v in load_order:
            p = load_parent[v]
            if p >= 0:
                c = w[load_parent_edge[v]]
                d[p] -= c * c / d[v]
                rhs[p] += c * rhs[v] / d[v]
        dx = np.zeros(n)
        for v in load_order[::-1]:
            p = load_parent[v]
            if p >= 0:
                dx[v] = (rhs[v] + w[load_parent_edge[v]] * dx[p]) / d[v]
            else:
                dx[v] = rhs[v] / d[v]
        alpha = 1.0
        base = delta.copy()
        while True:
            delta[loads] = base[loads] + alpha * dx[loads]
            r_new, norm_new = _load_residual(delta, P, A, eu, ev, loads)
            if norm_new < norm or norm_new <= tol:
                break
            alpha *= 0.5
            if alpha < 1e-8:
                delta[:] = base
                history[it + 1] = norm
                return -1
        r, norm = r_new, norm_new
        history[it + 1] = norm
    return maxit if norm <= tol else -1


def _estimator(phi, xi, eu, ev, cap, beta_uv, beta_vu, h, kphi, substeps):
    n = phi.size
    pos = xi > 0
    neg = xi < 0
    src_p, dst_p = eu[pos], ev[pos]
    src_n, dst_n = ev[neg], eu[neg]
    rat_p = beta_uv[pos] * xi[pos] / cap[pos]
    rat_n = beta_vu[neg] * (-xi[neg]) / cap[neg]
    for _ in range(substeps):
        target = np.zeros(n)
        np.maximum.at(target, src_p, np.maximum(rat_p, phi[dst_p]))
        np.maximum.at(target, src_n, np.maximum(rat_n, phi[dst_n]))
        phi -= h * kphi * (phi - target)


def _control(gens, phi, x, lo, hi, gamma, zeta, dt, kP, kPg, sign):
    g = len(gens)
    ph = [phi[i] for i in gens]
    gam = [gamma[i] for i in gens]
    all_unsat = all(gam)
    avg = sum(ph) / g
    new_x = []
    for a, i in enumerate(gens):
        tot = ph[a]
        cnt = 1
        smax = 0.0
        for b in range(g):
            if b == a:
                continue
            if gam[b]:
                tot += ph[b]
                cnt += 1
            elif ph[b] > smax:
                smax = ph[b]
        navg = tot / cnt
        ptil = sign * (-kP * (ph[a] - navg) - kPg * (navg - smax))
        z = int((x[i] <= lo[i] and ptil > 0) or (x[i] >= hi[i] and ptil < 0))
        if all_unsat:
            u = -sign * kP * (ph[a] - avg)
        elif gam[a] or z:
            u = ptil
        else:
            u = 0.0
        v = min(max(x[i] + dt * u, lo[i]), hi[i])
        new_x.append((v, ptil))
    for (v, ptil), i in zip(new_x, gens):
        x[i] = v
        gamma[i] = int(lo[i] < v < hi[i])
        zeta[i] = int((v <= lo[i] and ptil > 0) or (v >= hi[i] and ptil < 0))


def advance(
    n_ticks, dt, substeps, mode, kphi, kP, kPg, tol, maxit,
    eu, ev, A, cap, beta_uv, beta_vu,
    gens, load_order, load_parent, load_parent_edge,
    delta, P, D, phi, lo, hi, gamma, zeta, history,
):
    """Advance the closed loop by ``n_ticks``; return ticks completed."""
    n = P.size
    h = dt / substeps
    x = P if mode == 1 else D
    sign = -1.0 if mode == 2 else 1.0
    for tick in range(n_ticks):
        _, inj = _injections(delta, A, eu, ev, n)
        delta[gens] += dt * (P[gens] - inj[gens]) / D[gens]
        if solve_loads(delta, P, A, eu, ev, load_order, load_parent, load_parent_edge, tol, maxit, history) < 0:
            return tick
        xi = A * np.sin(delta[eu] - delta[ev])
        _estimator(phi, xi, eu, ev, cap, beta_uv, beta_vu, h, kphi, substeps)
        if mode:
            _control(gens, phi, x, lo, hi, gamma, zeta, dt, kP, kPg, sign)
    return n_ticks
