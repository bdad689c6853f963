"""Nonlinear uniformly elliptic operators F(x, r, p, M) and their pointwise
supremizing policies.

Every operator exposes batched `evaluate` and `supremizer`; a policy is the
coefficient tuple (A, b, c, f) of the linear operator -A:M + b.p + c r + f
that attains F at the linearization point.  Structure constants (lam, Lam,
gamma, mu) make the Pucci-envelope inequality checkable by sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_EIG_TOL = 1e-12


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, dim) if x.size == dim else x.reshape(-1, 1)
    return x


def _check_symmetric(M):
    if np.max(np.abs(M - np.swapaxes(M, -1, -2))) > 1e-10 * max(1.0, np.max(np.abs(M))):
        raise ValueError("matrix argument must be symmetric")


def _eigh(M):
    return np.linalg.eigh(M)


def _assemble_from_eigs(vecs, diag):
    return np.einsum("...ik,...k,...jk->...ij", vecs, diag, vecs)


# -- Pucci extremal operators --------------------------------------------------


def pucci_plus_batch(M: np.ndarray, lam: float, Lam: float):
    """sup over lam*I <= A <= Lam*I of -A:M, with a supremizer per sample."""
    _check_symmetric(M)
    w, v = _eigh(M)
    diag = np.where(w > 0.0, lam, Lam)
    value = -np.sum(diag * w, axis=-1)
    return value, _assemble_from_eigs(v, diag)


def pucci_minus_batch(M: np.ndarray, lam: float, Lam: float):
    _check_symmetric(M)
    w, v = _eigh(M)
    diag = np.where(w > 0.0, Lam, lam)
    value = -np.sum(diag * w, axis=-1)
    return value, _assemble_from_eigs(v, diag)


def pucci_plus(M, lam: float, Lam: float):
    """Single-matrix convenience wrapper: returns (value, supremizer A)."""
    M = np.asarray(M, dtype=float)
    val, A = pucci_plus_batch(M[None], lam, Lam)
    return float(val[0]), A[0]


def pucci_minus(M, lam: float, Lam: float):
    M = np.asarray(M, dtype=float)
    val, A = pucci_minus_batch(M[None], lam, Lam)
    return float(val[0]), A[0]


# -- regularized Monge-Ampere supremum ----------------------------------------


def _simplex_candidates(mvals: np.ndarray, xi: np.ndarray, eps: float):
    """All KKT candidates of max -a.m + n(xi prod a)^(1/n) on the clipped simplex.

    Enumerates active sets (coordinates pinned at eps); for each, the interior
    stationarity condition reduces to a scalar root problem in the multiplier,
    solved by bisection in log form.  Concavity makes the best feasible
    candidate the global maximizer.
    """
    m, n = mvals.shape
    candidates = []

    def push(a):
        candidates.append(a)

    for mask in range(2**n - 1):  # mask bit set = coordinate pinned at eps
        pinned = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        free = ~pinned
        k = int(free.sum())
        budget = 1.0 - eps * (n - k)
        if budget < eps * k - 1e-15:
            continue
        a = np.full((m, n), eps)
        if k == 1:
            a[:, free] = budget
            push(a)
            continue
        cc = xi * eps ** (n - k)
        mf = mvals[:, free]  # (m, k)
        valid = cc > 0.0
        if not np.any(valid):
            continue
        lo = -np.min(mf, axis=1)
        # expanding upper bracket
        span = 1.0 + np.max(np.abs(mf), axis=1) + cc ** (1.0 / n)
        hi = lo + span
        nu = np.where(valid, lo, 0.0)

        def phi(nu_arr):
            # decreasing in nu with a sign change at the stationary multiplier
            t = nu_arr[:, None] + mf
            t = np.maximum(t, 1e-300)
            logprod = np.sum(np.log(t), axis=1)
            sinv = np.sum(1.0 / t, axis=1)
            if k == n:
                return np.log(np.maximum(cc, 1e-300)) - logprod
            logR = (np.log(np.maximum(cc, 1e-300)) - logprod) / (n - k)
            return logR + np.log(sinv) - np.log(budget)

        for _ in range(80):
            bad = valid & (phi(hi) > 0.0)
            if not np.any(bad):
                break
            hi = np.where(bad, lo + 2 * (hi - lo), hi)
        lo_b = lo + 1e-300
        hi_b = hi
        for _ in range(110):
            mid = 0.5 * (lo_b + hi_b)
            up = phi(mid) > 0.0
            lo_b = np.where(up, mid, lo_b)
            hi_b = np.where(up, hi_b, mid)
        nu = 0.5 * (lo_b + hi_b)
        t = np.maximum(nu[:, None] + mf, 1e-300)
        if k == n:
            scale = 1.0 / np.sum(1.0 / t, axis=1)
        else:
            logprod = np.sum(np.log(t), axis=1)
            scale = np.exp((np.log(np.maximum(cc, 1e-300)) - logprod) / (n - k))
        af = scale[:, None] / t
        af *= (budget / np.maximum(af.sum(axis=1), 1e-300))[:, None]
        a[:, free] = af
        a[~valid] = np.nan
        push(a)
    return candidates


def ma_reg_sup_batch(M: np.ndarray, xi: np.ndarray, eps: float):
    """sup over {A symmetric, tr A = 1, A >= eps I} of -A:M + n(xi det A)^(1/n).

    Returns (value, A, reward) with reward = n(xi det A)^(1/n) at the optimum.
    The supremizer shares an eigenbasis with M.
    """
    M = np.asarray(M, dtype=float)
    xi = np.asarray(xi, dtype=float)
    _check_symmetric(M)
    n = M.shape[-1]
    if not 0.0 < eps < 1.0 / n:
        raise ValueError("eps must lie in (0, 1/n)")
    if np.any(xi < 0.0):
        raise ValueError("xi must be nonnegative")
    w, v = _eigh(M)
    value, a_best, reward = _simplex_sup(w, xi, eps)
    A = _assemble_from_eigs(v, a_best)
    return value, A, reward


def _simplex_sup(mvals, xi, eps):
    n = mvals.shape[-1]
    best_val = np.full(mvals.shape[0], -np.inf)
    best_a = np.full_like(mvals, np.nan)
    for a in _simplex_candidates(mvals, xi, eps):
        feas = np.all(a >= eps - 1e-12, axis=1) & ~np.any(np.isnan(a), axis=1)
        prod = np.prod(np.maximum(a, 0.0), axis=1)
        val = -np.sum(a * mvals, axis=1) + n * (xi * prod) ** (1.0 / n)
        val = np.where(feas, val, -np.inf)
        take = val > best_val
        best_val = np.where(take, val, best_val)
        best_a = np.where(take[:, None], a, best_a)
    reward = n * (xi * np.prod(best_a, axis=1)) ** (1.0 / n)
    return best_val, best_a, reward


def ma_reg_sup(M, xi_val: float, eps: float):
    """Single-matrix wrapper: returns (value, supremizer A in S(eps))."""
    M = np.asarray(M, dtype=float)
    val, A, _ = ma_reg_sup_batch(M[None], np.array([float(xi_val)]), eps)
    return float(val[0]), A[0]


# -- coefficient wrappers ------------------------------------------------------


def _coeff(value, shape_suffix):
    """Wrap a constant or callable coefficient into a batched callable."""
    if callable(value):
        def wrapped(x):
            out = np.asarray(value(x), dtype=float)
            want = (x.shape[0],) + shape_suffix
            if out.shape != want:
                out = np.broadcast_to(out, want).copy()
            return out
        return wrapped
    const = np.asarray(value, dtype=float)

    def const_fn(x):
        return np.broadcast_to(const, (x.shape[0],) + shape_suffix).copy()

    return const_fn


# -- operator classes ----------------------------------------------------------


class Operator:
    """Common interface: structure constants plus batched evaluate/supremizer."""

    dim: int
    lam: float
    Lam: float
    gamma: float
    mu: float

    def evaluate(self, x, r, p, M) -> np.ndarray:
        raise NotImplementedError

    def supremizer(self, x, r, p, M):
        """Policy (A, b, c, f) with -A:M + b.p + c r + f == evaluate(...)."""
        raise NotImplementedError

    def initial_policy(self, x):
        """Seed policy for the outer iteration (coefficient I/2 where valid)."""
        raise NotImplementedError

    def evaluate_one(self, x, r, p, M) -> float:
        x = np.asarray(x, dtype=float).reshape(1, self.dim)
        M = np.asarray(M, dtype=float).reshape(1, self.dim, self.dim)
        p = np.asarray(p, dtype=float).reshape(1, self.dim)
        return float(self.evaluate(x, np.array([float(r)]), p, M)[0])


class LinearOperator(Operator):
    """F = -A(x):M + b(x).p + c(x) r with lam I <= A <= Lam I and c >= 0."""

    def __init__(self, A, b=None, c=None, dim=2, lam=None, Lam=None,
                 gamma=None, mu=None):
        self.dim = dim
        self._A = _coeff(A, (dim, dim))
        self._b = _coeff(b if b is not None else np.zeros(dim), (dim,))
        self._c = _coeff(c if c is not None else 0.0, ())
        if lam is None or Lam is None:
            if callable(A):
                raise ValueError("lam/Lam must be given for variable coefficients")
            ev = np.linalg.eigvalsh(np.asarray(A, dtype=float))
            lam = lam if lam is not None else float(ev.min())
            Lam = Lam if Lam is not None else float(ev.max())
        self.lam, self.Lam = float(lam), float(Lam)
        if gamma is None:
            gamma = 0.0 if callable(b) else float(np.linalg.norm(self._b(np.zeros((1, dim)))[0]))
        if mu is None:
            mu = 0.0 if callable(c) else float(self._c(np.zeros((1, dim)))[0])
        self.gamma, self.mu = float(gamma), float(mu)

    def evaluate(self, x, r, p, M):
        x = _as_batch(x, self.dim)
        A, b, c = self._A(x), self._b(x), self._c(x)
        return (-np.einsum("mij,mij->m", A, M) + np.einsum("mi,mi->m", b, p)
                + c * np.asarray(r, dtype=float))

    def supremizer(self, x, r, p, M):
        x = _as_batch(x, self.dim)
        return self._A(x), self._b(x), self._c(x), np.zeros(x.shape[0])

    def initial_policy(self, x):
        # the policy never depends on the iterate; start from the coefficients
        x = _as_batch(x, self.dim)
        return self._A(x), self._b(x), self._c(x), np.zeros(x.shape[0])


class PucciOperator(Operator):
    """F = P^{+/-}_{lam,Lam}(M) + mu_grad |p| (extremal envelope operator)."""

    def __init__(self, lam: float, Lam: float, grad_coeff: float = 0.0,
                 sign: int = +1, dim: int = 2):
        if not 0 < lam <= Lam:
            raise ValueError("need 0 < lam <= Lam")
        self.dim = dim
        self.lam, self.Lam = float(lam), float(Lam)
        self.grad_coeff = float(grad_coeff)
        self.sign = int(sign)
        self.gamma = self.grad_coeff
        self.mu = 0.0

    def evaluate(self, x, r, p, M):
        fn = pucci_plus_batch if self.sign > 0 else pucci_minus_batch
        val, _ = fn(np.asarray(M, dtype=float), self.lam, self.Lam)
        return val + self.grad_coeff * np.linalg.norm(np.asarray(p, dtype=float), axis=-1)

    def supremizer(self, x, r, p, M):
        fn = pucci_plus_batch if self.sign > 0 else pucci_minus_batch
        _, A = fn(np.asarray(M, dtype=float), self.lam, self.Lam)
        p = np.asarray(p, dtype=float)
        norm = np.linalg.norm(p, axis=-1, keepdims=True)
        b = np.where(norm > 1e-14, self.grad_coeff * p / np.maximum(norm, 1e-300), 0.0)
        m = A.shape[0]
        return A, b, np.zeros(m), np.zeros(m)

    def initial_policy(self, x):
        x = _as_batch(x, self.dim)
        m = x.shape[0]
        A = np.broadcast_to(0.5 * np.eye(self.dim), (m, self.dim, self.dim)).copy()
        return A, np.zeros((m, self.dim)), np.zeros(m), np.zeros(m)


class HJBSupOperator(Operator):
    """F = max over a finite list of -A^a(x):M + b^a(x).p + c^a(x) r + xi^a(x)."""

    def __init__(self, entries: Sequence[tuple], dim: int, lam: float, Lam: float,
                 gamma: float = 0.0, mu: float = 0.0):
        if not entries:
            raise ValueError("the control list must be nonempty")
        self.dim = dim
        self.entries = [
            (_coeff(A, (dim, dim)), _coeff(b if b is not None else np.zeros(dim), (dim,)),
             _coeff(c if c is not None else 0.0, ()), _coeff(xi if xi is not None else 0.0, ()))
            for (A, b, c, xi) in entries
        ]
        self.lam, self.Lam = float(lam), float(Lam)
        self.gamma, self.mu = float(gamma), float(mu)

    def _entry_values(self, x, r, p, M):
        vals, coeffs = [], []
        for fa, fb, fc, fxi in self.entries:
            A, b, c, xi = fa(x), fb(x), fc(x), fxi(x)
            vals.append(-np.einsum("mij,mij->m", A, M)
                        + np.einsum("mi,mi->m", b, p) + c * r + xi)
            coeffs.append((A, b, c, xi))
        return np.stack(vals, axis=0), coeffs

    def evaluate(self, x, r, p, M):
        x = _as_batch(x, self.dim)
        vals, _ = self._entry_values(x, np.asarray(r, dtype=float),
                                     np.asarray(p, dtype=float), np.asarray(M, dtype=float))
        return vals.max(axis=0)

    def argmax_index(self, x, r, p, M):
        x = _as_batch(x, self.dim)
        vals, _ = self._entry_values(x, np.asarray(r, dtype=float),
                                     np.asarray(p, dtype=float), np.asarray(M, dtype=float))
        return vals.argmax(axis=0)

    def supremizer(self, x, r, p, M):
        x = _as_batch(x, self.dim)
        vals, coeffs = self._entry_values(x, np.asarray(r, dtype=float),
                                          np.asarray(p, dtype=float), np.asarray(M, dtype=float))
        best = vals.argmax(axis=0)
        m = x.shape[0]
        A = np.empty((m, self.dim, self.dim))
        b = np.empty((m, self.dim))
        c = np.empty(m)
        f = np.empty(m)
        for e, (Ae, be, ce, xie) in enumerate(coeffs):
            sel = best == e
            A[sel], b[sel], c[sel], f[sel] = Ae[sel], be[sel], ce[sel], xie[sel]
        return A, b, c, f

    def initial_policy(self, x):
        # I/2 is generally outside a finite control list; seed with entry 0
        x = _as_batch(x, self.dim)
        fa, fb, fc, fxi = self.entries[0]
        return fa(x), fb(x), fc(x), fxi(x)


class MongeAmpereOperator(Operator):
    """Bellman reformulation of det D2u = xi over trace-one matrices A >= eps I."""

    def __init__(self, xi, eps: float, dim: int):
        if not 0.0 < eps < 1.0 / dim:
            raise ValueError("eps must lie in (0, 1/dim)")
        self.dim = dim
        self.eps = float(eps)
        self._xi = _coeff(xi, ())
        self.lam = self.eps
        self.Lam = 1.0 - (dim - 1) * self.eps
        self.gamma = 0.0
        self.mu = 0.0

    def xi(self, x):
        return self._xi(_as_batch(x, self.dim))

    def evaluate(self, x, r, p, M):
        x = _as_batch(x, self.dim)
        val, _, _ = ma_reg_sup_batch(np.asarray(M, dtype=float), self._xi(x), self.eps)
        return val

    def supremizer(self, x, r, p, M):
        x = _as_batch(x, self.dim)
        _, A, reward = ma_reg_sup_batch(np.asarray(M, dtype=float), self._xi(x), self.eps)
        m = x.shape[0]
        return A, np.zeros((m, self.dim)), np.zeros(m), reward

    def initial_policy(self, x):
        x = _as_batch(x, self.dim)
        m = x.shape[0]
        n = self.dim
        A = np.broadcast_to(0.5 * np.eye(n), (m, n, n)).copy()
        f = n * (self._xi(x) * 0.5**n) ** (1.0 / n)
        return A, np.zeros((m, n)), np.zeros(m), f


# -- structure inequality sampler ----------------------------------------------


@dataclass
class StructureReport:
    num_samples: int
    violations: list
    max_violation: float

    @property
    def ok(self) -> bool:
        return not self.violations


def check_structure(op: Operator, samples, tol: float = 1e-9) -> StructureReport:
    """Check the two-sided Pucci-envelope inequality on a sample set.

    samples: tuple of arrays (x, r, p, M, s, q, N) with leading batch size m.
    """
    x, r, p, M, s, q, N = (np.asarray(a, dtype=float) for a in samples)
    diff = op.evaluate(x, r, p, M) - op.evaluate(x, s, q, N)
    lo, _ = pucci_minus_batch(M - N, op.lam, op.Lam)
    hi, _ = pucci_plus_batch(M - N, op.lam, op.Lam)
    dgrad = op.gamma * np.linalg.norm(p - q, axis=-1)
    lower = lo - dgrad - op.mu * np.maximum(s - r, 0.0)
    upper = hi + dgrad + op.mu * np.maximum(r - s, 0.0)
    below = lower - diff
    above = diff - upper
    bad = np.maximum(below, above)
    idx = np.flatnonzero(bad > tol)
    return StructureReport(
        num_samples=x.shape[0],
        violations=[(int(i), float(bad[i])) for i in idx],
        max_violation=float(bad.max(initial=0.0)),
    )
