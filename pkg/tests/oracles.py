"""Independent verification oracles used by the test suite.

Everything here deliberately avoids the library's own code paths: the
projection oracle enumerates active sets of a dense QP, gradients are
checked by central differences, and consensus updates are rebuilt from a
dense Kronecker product.  scipy supplies the numerical kernels (lstsq,
nnls) so the arithmetic route is genuinely different from the package's.
"""

import itertools

import numpy as np
from scipy.linalg import lstsq
from scipy.optimize import nnls


def box_constraints(lower, upper):
    """Box as a list of (a, b) halfspace rows a.v <= b (finite sides only)."""
    rows = []
    dim = len(lower)
    for k in range(dim):
        e = np.zeros(dim)
        if np.isfinite(upper[k]):
            e_up = e.copy()
            e_up[k] = 1.0
            rows.append((e_up, float(upper[k])))
        if np.isfinite(lower[k]):
            e_lo = e.copy()
            e_lo[k] = -1.0
            rows.append((e_lo, float(-lower[k])))
    return rows


def projection_qp_oracle(v, equalities, inequalities, feas_tol=1e-9):
    """Exact projection onto {w : Aw = b, Cw <= d} by active-set enumeration.

    ``equalities`` and ``inequalities`` are lists of (a, b) rows.  Every
    subset of inequality rows is tried as an active set; each candidate
    solves the equality-constrained least-distance problem in closed form
    through the KKT system.  The feasible candidate closest to v is the
    projection (the true active set is among the subsets).
    """
    v = np.asarray(v, dtype=float)
    dim = v.size
    eq_rows = [(np.asarray(a, dtype=float), float(b)) for a, b in equalities]
    in_rows = [(np.asarray(a, dtype=float), float(b)) for a, b in inequalities]

    best = None
    best_dist = np.inf
    for r in range(len(in_rows) + 1):
        for subset in itertools.combinations(range(len(in_rows)), r):
            rows = eq_rows + [in_rows[k] for k in subset]
            if rows:
                amat = np.stack([a for a, _ in rows])
                bvec = np.array([b for _, b in rows])
                # minimize |w - v|^2 subject to amat w = bvec:
                # w = v - amat^T lam with (amat amat^T) lam = amat v - bvec
                gram = amat @ amat.T
                rhs = amat @ v - bvec
                lam = lstsq(gram, rhs, lapack_driver="gelsd")[0]
                w = v - amat.T @ lam
                if np.linalg.norm(amat @ w - bvec) > 1e-7 * max(1.0, np.linalg.norm(bvec)):
                    continue  # inconsistent active set
            else:
                w = v.copy()
            ok = all(a @ w <= b + feas_tol for a, b in in_rows)
            ok = ok and all(abs(a @ w - b) <= 1e-7 * max(1.0, abs(b)) for a, b in eq_rows)
            if ok:
                dist = np.linalg.norm(w - v)
                if dist < best_dist - 1e-12:
                    best_dist = dist
                    best = w
    if best is None:
        raise RuntimeError("oracle found no feasible candidate; empty set?")
    return best


def ev_kkt_residual(v, w, plugged, s_max, reactive_always_on=True, active_tol=1e-7):
    """Stationarity residual of w as the projection of v onto a charger set.

    Builds the active constraint gradients at w (energy-target equality,
    sign/availability bounds, apparent-power disks) and fits v - w as a
    nonnegative combination (sign-free for equalities, realized as +/-
    column pairs) via NNLS.  Returns the leftover norm; a valid projection
    makes it vanish up to numerical error.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    plugged = np.asarray(plugged).astype(bool)
    horizon = plugged.size
    cols = []

    def free_direction(g):
        cols.append(g)
        cols.append(-g)

    if plugged.any():
        free_direction(np.concatenate([plugged.astype(float), np.zeros(horizon)]))
    for tau in range(horizon):
        e_p = np.zeros(2 * horizon)
        e_p[tau] = 1.0
        if plugged[tau]:
            if w[tau] >= -active_tol:          # p <= 0 active
                cols.append(e_p)
        else:
            free_direction(e_p)                # p = 0 pinned
            if not reactive_always_on:
                e_q = np.zeros(2 * horizon)
                e_q[horizon + tau] = 1.0
                free_direction(e_q)
        radius = np.hypot(w[tau], w[horizon + tau])
        if radius >= s_max - active_tol:       # disk boundary active
            g = np.zeros(2 * horizon)
            g[tau] = w[tau]
            g[horizon + tau] = w[horizon + tau]
            cols.append(g)
    target = v - w
    if not cols:
        return float(np.linalg.norm(target))
    gmat = np.stack(cols, axis=1)
    _, resid = nnls(gmat, target)
    return float(resid)


def central_diff_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h * max(1.0, abs(x[k]))
        g[k] = (f(x + step) - f(x - step)) / (2 * step[k])
    return g


def central_diff_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h * max(1.0, abs(x[k]))
        cols.append((np.asarray(f(x + step)) - np.asarray(f(x - step))) / (2 * step[k]))
    return np.stack(cols, axis=1)


def kron_consensus_oracle(weights, z, phix):
    """Tracker update via the explicit Kronecker-lifted matrix.

    Builds W (x) I_d densely and applies it to the flattened stack, the
    route the library is required to avoid.
    """
    n, d = z.shape
    big = np.kron(weights, np.eye(d))
    zf = z.reshape(-1)
    pf = phix.reshape(-1)
    out = big @ zf + (big - np.eye(n * d)) @ pf
    return out.reshape(n, d)
