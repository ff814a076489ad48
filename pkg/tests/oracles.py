"""Independent reference computations used by the tests.

Nothing here imports the package's projection or gradient code; each
oracle solves its problem from first principles.
"""

import itertools

import numpy as np


def qp_solve(P, q, G=None, g=None, E=None, e=None, tol=1e-9):
    """Minimise ``x.Px/2 + q.x`` over ``{Gx <= g, Ex = e}`` by active-set enumeration.

    ``P`` must be positive definite. Every subset of inequalities
    (compatible with the equality rank) is tried as the active set; the
    KKT system is solved and the candidate kept when it is primal feasible
    with nonnegative multipliers. Meant for dimensions up to about six.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    q = np.asarray(q, dtype=float).ravel()
    n = q.size
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    g = np.zeros(0) if g is None else np.asarray(g, dtype=float).ravel()
    E = np.zeros((0, n)) if E is None else np.atleast_2d(np.asarray(E, dtype=float))
    e = np.zeros(0) if e is None else np.asarray(e, dtype=float).ravel()
    rank_e = np.linalg.matrix_rank(E) if E.shape[0] else 0
    gscale = max(1.0, np.abs(g).max(initial=0.0))
    escale = max(1.0, np.abs(e).max(initial=0.0))
    best, best_val = None, np.inf
    m = G.shape[0]
    for size in range(0, min(m, n - rank_e) + 1):
        for act in itertools.combinations(range(m), size):
            K = np.vstack([E, G[list(act)]])
            rhs = np.concatenate([e, g[list(act)]])
            k = K.shape[0]
            if k and np.linalg.matrix_rank(K) < k:
                continue
            kkt = np.block([[P, K.T], [K, np.zeros((k, k))]])
            sol = np.linalg.solve(kkt, np.concatenate([-q, rhs]))
            x, lam = sol[:n], sol[n:]
            if np.any(lam[E.shape[0]:] < -tol):
                continue
            if m and np.any(G @ x - g > tol * gscale):
                continue
            if E.shape[0] and np.any(np.abs(E @ x - e) > tol * escale):
                continue
            val = 0.5 * x @ P @ x + q @ x
            if best is None or val < best_val - 1e-14 * max(1.0, abs(best_val)):
                best, best_val = x, val
    if best is None:
        raise RuntimeError("no KKT point found; is the feasible set empty?")
    return best


def qp_project(z, G=None, g=None, E=None, e=None, tol=1e-9):
    """Euclidean projection of ``z`` onto ``{Gy <= g, Ey = e}``."""
    z = np.asarray(z, dtype=float).ravel()
    return qp_solve(np.eye(z.size), -z, G, g, E, e, tol)


def simplex_qp(v, h):
    n = len(v)
    return qp_project(v, G=-np.eye(n), g=np.zeros(n), E=np.ones((1, n)), e=[h])


def box_consensus_qp(x, upper):
    """``x`` of shape (S, n): consensus rows inside ``[0, upper]``."""
    S, n = x.shape
    dim = S * n
    G = np.vstack([-np.eye(dim), np.eye(dim)])
    g = np.concatenate([np.zeros(dim), np.tile(upper, S)])
    rows = []
    for s in range(1, S):
        for j in range(n):
            r = np.zeros(dim)
            r[j] = 1.0
            r[s * n + j] = -1.0
            rows.append(r)
    E = np.array(rows) if rows else None
    e = np.zeros(len(rows)) if rows else None
    return qp_project(x.ravel(), G=G, g=g, E=E, e=e).reshape(S, n)


def capacity_pair_qp(eta, nu, c):
    y = qp_project([eta, nu], G=[[-1.0, 1.0]], g=[c])
    return y[0], y[1]


def halfspace_qp(normal, offset, z):
    return qp_project(z, G=[normal], g=[offset])


def block_qp(N, c, entries, x, f):
    """Projection of ``(x, f)`` onto ``{N_a f_s - x[s, a] <= c[s, a]}`` for all entries."""
    S, A = x.shape
    R = f.shape[1]
    dim = S * A + S * R
    G, g = [], []
    for a, s in entries:
        r = np.zeros(dim)
        r[s * A + a] = -1.0
        r[S * A + s * R: S * A + (s + 1) * R] = N[a]
        G.append(r)
        g.append(c[s, a])
    y = qp_project(np.concatenate([x.ravel(), f.ravel()]), G=np.array(G), g=np.array(g))
    return y[: S * A].reshape(S, A), y[S * A:].reshape(S, R)


def least_squares_projection(r, b, z):
    """Closest point to ``z`` on ``{y : r.y = b}`` from the normal equations."""
    r = np.asarray(r, dtype=float)[None, :]
    lam = np.linalg.lstsq(r @ r.T, r @ z - b, rcond=None)[0]
    return z - r.T @ lam


def capexp_objective(N, p, c, eta, cong, Q, x, f):
    """Expected cost written out scenario by scenario."""
    total = 0.0
    for s in range(len(p)):
        v = N @ f[s]
        travel = np.sum(eta * v + cong * v * v / (2.0 * c[s]))
        total += p[s] * (travel + 0.5 * x[s] @ Q @ x[s])
    return total


def central_gradient(fun, z, step):
    z = np.array(z, dtype=float)
    g = np.empty_like(z)
    for i in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[i] += step
        zm[i] -= step
        g[i] = (fun(zp) - fun(zm)) / (2.0 * step)
    return g


def projected_gradient(grad, project, z0, step, tol=1e-12, max_iter=1_000_000):
    """Fixed-step projected gradient until successive iterates differ by ``<= tol``."""
    z = np.array(z0, dtype=float)
    for _ in range(max_iter):
        nz = project(z - step * grad(z))
        if np.max(np.abs(nz - z)) <= tol:
            return nz
        z = nz
    raise RuntimeError("projected gradient did not converge")


def chi_square_stat(counts, probs):
    counts = np.asarray(counts, dtype=float)
    expected = counts.sum() * np.asarray(probs, dtype=float)
    return float(np.sum((counts - expected) ** 2 / expected))
