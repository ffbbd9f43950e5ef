"""Lanczos iteration with full reorthogonalization in a weighted inner product."""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import eigh_tridiagonal

log = logging.getLogger(__name__)


class LanczosError(RuntimeError):
    """Lanczos failed to converge; ``residuals`` holds the current estimates."""

    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


class RitzPairs(list):
    """List of ``(ritz_value, ritz_vector)`` with run diagnostics attached."""

    iterations: int = 0
    restarts: int = 0
    orthogonality: float = 0.0
    basis: np.ndarray | None = None
    alphas: np.ndarray | None = None
    betas: np.ndarray | None = None


def _identity(x):
    return x


def lanczos_largest(
    apply_op,
    apply_inner=None,
    project=None,
    dim=None,
    nev=1,
    tol=1e-10,
    max_iter=500,
    seed=0,
    keep_basis=False,
):
    """Largest eigenpairs of an operator symmetric in the ``apply_inner`` product.

    Each requested pair is found by a separate Lanczos run that keeps its
    basis orthonormal (two passes of classical Gram-Schmidt) against both its
    own vectors and every previously converged Ritz vector. Locking one pair
    per run means repeated eigenvalues are recovered with their multiplicity.

    Parameters
    ----------
    apply_op : callable
        ``x -> T x``.
    apply_inner : callable, optional
        ``x -> M x`` defining the inner product ``(x, y)_M = x . M y``.
        Identity when omitted.
    project : callable, optional
        Applied to every new Lanczos vector (e.g. removal of a known kernel).
    dim : int
        Problem dimension.
    nev : int
        Number of pairs wanted.
    tol : float
        Convergence when ``||T x - theta x||_M <= tol * |theta|``.
    max_iter : int
        Maximum Lanczos steps per requested pair.
    seed : int
        Seed for the random start vectors.

    Returns
    -------
    RitzPairs
        Pairs sorted by descending Ritz value, vectors ``M``-normalized.
    """
    M = apply_inner or _identity
    P = project or _identity
    rng = np.random.default_rng(seed)
    locked_x = np.zeros((0, dim))
    locked_mx = np.zeros((0, dim))
    out = RitzPairs()
    total_its = 0
    worst_orth = 0.0

    def orthogonalize(w, V, MV):
        for _ in range(2):
            for B, MB in ((locked_x, locked_mx), (V, MV)):
                if len(B):
                    w = w - B.T @ (MB @ w)
        return w

    def fresh_vector(V, MV):
        for _ in range(5):
            w = P(rng.standard_normal(dim))
            w = orthogonalize(w, V, MV)
            nrm = np.sqrt(max(w @ M(w), 0.0))
            if nrm > 1e-12:
                return w / nrm
        return None

    for _ in range(nev):
        cap = min(64, max_iter)
        Vbuf = np.empty((cap, dim))
        MVbuf = np.empty((cap, dim))
        k = 0
        alphas, betas = [], []
        restarts = 0
        v = fresh_vector(Vbuf[:0], MVbuf[:0])
        if v is None:
            raise LanczosError(f"no search direction left after {len(out)} pairs")
        theta = s = None
        converged = False
        resid = np.inf
        for j in range(max_iter):
            if k == cap:
                cap = min(2 * cap, max_iter)
                Vbuf = np.concatenate([Vbuf, np.empty((cap - k, dim))])
                MVbuf = np.concatenate([MVbuf, np.empty((cap - k, dim))])
            mv = M(v)
            Vbuf[k] = v
            MVbuf[k] = mv
            k += 1
            V, MV = Vbuf[:k], MVbuf[:k]
            w = P(apply_op(v))
            alpha = float(w @ mv)
            alphas.append(alpha)
            w = w - alpha * v
            if j > 0:
                w = w - betas[-1] * V[-2]
            w = orthogonalize(w, V, MV)
            beta = float(np.sqrt(max(w @ M(w), 0.0)))
            if j:
                theta_all, S = eigh_tridiagonal(np.array(alphas), np.array(betas))
            else:
                theta_all, S = np.array(alphas), np.ones((1, 1))
            theta = theta_all[-1]
            s = S[:, -1]
            resid = abs(beta * s[-1])
            scale = max(abs(theta), np.finfo(float).tiny)
            if resid <= tol * scale or k + len(locked_x) >= dim:
                converged = True
                break
            if beta <= 1e-10 * max(abs(alpha), scale):
                restarts += 1
                if restarts > 3:
                    raise LanczosError("Lanczos breakdown persisted after 3 restarts", [resid])
                log.debug("Lanczos breakdown at step %d; restarting", j)
                v = fresh_vector(V, MV)
                if v is None:
                    converged = True
                    break
                betas.append(0.0)
                continue
            betas.append(beta)
            v = w / beta
        total_its += k
        if not converged:
            raise LanczosError(
                f"Lanczos did not converge in {max_iter} steps (residual {resid:.3e})", [resid]
            )
        V, MV = Vbuf[:k], MVbuf[:k]
        x = V.T @ s
        mx = M(x)
        nx = np.sqrt(x @ mx)
        x, mx = x / nx, mx / nx
        gram = V @ MV.T
        worst_orth = max(worst_orth, float(np.abs(gram - np.eye(k)).max()))
        locked_x = np.vstack([locked_x, x])
        locked_mx = np.vstack([locked_mx, mx])
        out.append((float(theta), x))
        if keep_basis:
            out.basis = V.copy()
            out.alphas = np.array(alphas)
            out.betas = np.array(betas[: k - 1])
        out.restarts += restarts
        log.debug("Lanczos pair %d: theta=%.12g after %d steps", len(out), theta, k)
    out.sort(key=lambda p: -p[0])
    out.iterations = total_its
    out.orthogonality = worst_orth
    return out
