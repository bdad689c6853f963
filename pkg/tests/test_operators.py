import numpy as np
import pytest

from minresfem.operators import (
    HJBSupOperator,
    LinearOperator,
    MongeAmpereOperator,
    PucciOperator,
    check_structure,
    ma_reg_sup,
    pucci_minus,
    pucci_plus,
)


# -- independent oracles -------------------------------------------------------


def pucci_grid_oracle(M, lam, Lam, npts=50):
    """Brute-force max of -A:M over admissible A diagonal in M's eigenbasis."""
    M = np.asarray(M, dtype=float)
    w, v = np.linalg.eigh(M)
    grids = np.meshgrid(*[np.linspace(lam, Lam, npts)] * len(w), indexing="ij")
    diag = np.stack([g.ravel() for g in grids], axis=1)
    vals = -(diag @ w)
    return vals.max()


def ma_grid_oracle_2d(M, xi, eps, npts=100000):
    w, _ = np.linalg.eigh(np.asarray(M, dtype=float))
    a = np.linspace(eps, 1 - eps, npts)
    vals = -(a * w[0] + (1 - a) * w[1]) + 2 * np.sqrt(np.maximum(xi * a * (1 - a), 0.0))
    return vals.max()


def ma_grid_oracle_3d(M, xi, eps, step=1e-3):
    """Barycentric grid of the given step, then local zoom refinements."""
    w, _ = np.linalg.eigh(np.asarray(M, dtype=float))

    def scan(lo1, hi1, lo2, hi2, n):
        best, arg = -np.inf, None
        for x in np.linspace(lo1, hi1, n):
            a2 = np.linspace(lo2, hi2, n)
            a3 = 1.0 - x - a2
            ok = (a3 >= eps) & (a2 >= eps) & (x >= eps)
            if not ok.any():
                continue
            vals = -(x * w[0] + a2[ok] * w[1] + a3[ok] * w[2]) \
                + 3 * np.cbrt(np.maximum(xi * x * a2[ok] * a3[ok], 0.0))
            i = int(np.argmax(vals))
            if vals[i] > best:
                best, arg = vals[i], (x, a2[ok][i])
        return best, arg

    n0 = int(1.0 / step)
    best, arg = scan(eps, 1 - 2 * eps, eps, 1 - 2 * eps, n0)
    span = 2.0 * step
    for _ in range(6):
        x0, y0 = arg
        best, arg = scan(max(eps, x0 - span), min(1 - 2 * eps, x0 + span),
                         max(eps, y0 - span), min(1 - 2 * eps, y0 + span), 41)
        span /= 15.0
    return best


def random_spd_bounded(rng, dim, lam, Lam):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigs = rng.uniform(lam, Lam, dim)
    return q @ np.diag(eigs) @ q.T


# -- Pucci ----------------------------------------------------------------------


def test_pucci_zero_matrix():
    val, A = pucci_plus(np.zeros((2, 2)), 0.1, 0.9)
    assert val == 0.0
    assert np.all(np.linalg.eigvalsh(A) >= 0.1 - 1e-14)


def test_pucci_plus_diagonal_example():
    # brute-force oracle agrees: diag(2, -1), lam=0.1, Lam=0.9
    M = np.diag([2.0, -1.0])
    val, A = pucci_plus(M, 0.1, 0.9)
    assert np.isclose(val, 0.7, atol=1e-12)
    assert np.allclose(np.sort(np.linalg.eigvalsh(A)), [0.1, 0.9], atol=1e-12)
    assert np.isclose(-np.tensordot(A, M), val, atol=1e-12)
    assert abs(pucci_grid_oracle(M, 0.1, 0.9) - val) < 1e-10


def test_pucci_plus_identity():
    val, _ = pucci_plus(np.eye(2), 0.1, 0.9)
    assert np.isclose(val, -0.2, atol=1e-13)
    assert abs(pucci_grid_oracle(np.eye(2), 0.1, 0.9) - val) < 1e-10


def test_pucci_minus_examples():
    val, _ = pucci_minus(np.diag([2.0, -1.0]), 0.1, 0.9)
    assert np.isclose(val, -1.7, atol=1e-12)
    val, _ = pucci_minus(np.eye(2), 1.0, 1.0)
    assert np.isclose(val, -2.0, atol=1e-13)


def test_pucci_minus_duality_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        S = rng.standard_normal((3, 3))
        M = S + S.T
        vm, _ = pucci_minus(M, 0.3, 1.7)
        vp, _ = pucci_plus(-M, 0.3, 1.7)
        assert np.isclose(vm, -vp, atol=1e-12)


def test_pucci_rejects_nonsymmetric():
    with pytest.raises(ValueError):
        pucci_plus(np.array([[0.0, 1.0], [0.0, 0.0]]), 0.1, 0.9)


@pytest.mark.parametrize("dim", [2, 3])
def test_pucci_value_vs_grid_oracle(dim):
    rng = np.random.default_rng(42)
    lam, Lam = 0.1, 0.9
    n = 1000
    for _ in range(n // 100):
        S = rng.standard_normal((100, dim, dim))
        M = S + np.swapaxes(S, 1, 2)
        from minresfem.operators import pucci_plus_batch
        vals, A = pucci_plus_batch(M, lam, Lam)
        # supremizer attains the value and is admissible
        attained = -np.einsum("mij,mij->m", A, M)
        assert np.max(np.abs(attained - vals)) < 1e-10
        eigs = np.linalg.eigvalsh(A)
        assert np.all(eigs >= lam - 1e-10) and np.all(eigs <= Lam + 1e-10)
        for i in range(0, 100, 7):  # grid oracle on a subsample (cost)
            ref = pucci_grid_oracle(M[i], lam, Lam)
            assert abs(ref - vals[i]) <= 1e-6 * max(1.0, abs(ref))


def test_pucci_monotonicity():
    rng = np.random.default_rng(1)
    for _ in range(200):
        S = rng.standard_normal((2, 2))
        M = S + S.T
        P = rng.standard_normal((2, 2))
        N = M + P @ P.T  # M <= N
        vm, _ = pucci_plus(M, 0.2, 1.1)
        vn, _ = pucci_plus(N, 0.2, 1.1)
        assert vm >= vn - 1e-12


def test_pucci_positive_homogeneity():
    rng = np.random.default_rng(2)
    for _ in range(100):
        S = rng.standard_normal((3, 3))
        M = S + S.T
        t = rng.uniform(0, 5)
        v1, _ = pucci_plus(t * M, 0.1, 0.9)
        v0, _ = pucci_plus(M, 0.1, 0.9)
        assert np.isclose(v1, t * v0, rtol=1e-11, atol=1e-12)


# -- regularized Monge-Ampere ----------------------------------------------------


def test_ma_identity_matrix():
    val, A = ma_reg_sup(np.eye(2), 1.0, 1e-4)
    assert abs(val) < 1e-10
    assert np.allclose(np.linalg.eigvalsh(A), [0.5, 0.5], atol=1e-9)
    assert abs(ma_grid_oracle_2d(np.eye(2), 1.0, 1e-4) - val) < 1e-8


def test_ma_diag41_example():
    # stationarity 25a^2 - 25a + 4 = 0 -> a = 0.2 on the small eigenvalue
    M = np.diag([4.0, 1.0])
    val, A = ma_reg_sup(M, 4.0, 1e-4)
    assert abs(val) < 1e-10
    assert np.allclose(np.sort(np.linalg.eigvalsh(A)), [0.2, 0.8], atol=1e-9)
    # supremizer feasibility
    assert np.isclose(np.trace(A), 1.0, atol=1e-12)
    assert abs(ma_grid_oracle_2d(M, 4.0, 1e-4) - val) < 1e-8


def test_ma_zero_xi_reduces_to_clipped_vertex():
    rng = np.random.default_rng(3)
    eps = 1e-3
    for _ in range(50):
        S = rng.standard_normal((2, 2))
        M = S + S.T
        val, A = ma_reg_sup(M, 0.0, eps)
        ref = ma_grid_oracle_2d(M, 0.0, eps)
        assert abs(val - ref) < 1e-8
        w = np.linalg.eigvalsh(A)
        assert np.isclose(np.sort(w)[0], eps, atol=1e-10)  # vertex of clipped simplex


@pytest.mark.parametrize("dim", [2, 3])
def test_ma_vs_grid_oracle_random(dim):
    rng = np.random.default_rng(7)
    eps = 1e-3
    oracle = ma_grid_oracle_2d if dim == 2 else ma_grid_oracle_3d
    for i in range(12):
        S = rng.standard_normal((dim, dim))
        M = S + S.T
        xi = rng.uniform(0.0, 5.0)
        val, A = ma_reg_sup(M, xi, eps)
        ref = oracle(M, xi, eps)
        assert abs(val - ref) <= 1e-7 * max(1.0, abs(ref))
        assert np.isclose(np.trace(A), 1.0, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(A)) >= eps - 1e-12


def test_ma_orthogonal_conjugation_invariance():
    rng = np.random.default_rng(11)
    for dim in (2, 3):
        for _ in range(50):
            S = rng.standard_normal((dim, dim))
            M = S + S.T
            xi = rng.uniform(0.0, 3.0)
            q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
            v1, _ = ma_reg_sup(M, xi, 1e-3)
            v2, _ = ma_reg_sup(q.T @ M @ q, xi, 1e-3)
            assert abs(v1 - v2) < 1e-10 * max(1.0, abs(v1))


def test_ma_rejects_negative_xi_and_bad_eps():
    with pytest.raises(ValueError):
        ma_reg_sup(np.eye(2), -1.0, 1e-4)
    with pytest.raises(ValueError):
        ma_reg_sup(np.eye(2), 1.0, 0.6)


# -- evaluate / supremizer -------------------------------------------------------


def test_linear_evaluate():
    op = LinearOperator(np.eye(2), dim=2)
    x = np.zeros((1, 2))
    val = op.evaluate(x, np.zeros(1), np.zeros((1, 2)), np.eye(2)[None])
    assert np.isclose(val[0], -2.0)


def test_linear_supremizer_is_coefficients():
    op = LinearOperator(np.diag([1.0, 2.0]), b=[0.5, -1.0], c=0.7, dim=2)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 2))
    A, b, c, f = op.supremizer(x, rng.standard_normal(5), rng.standard_normal((5, 2)),
                               rng.standard_normal((5, 2, 2)))
    assert np.allclose(A, np.diag([1.0, 2.0]))
    assert np.allclose(b, [0.5, -1.0])
    assert np.allclose(c, 0.7)
    assert np.allclose(f, 0.0)


def test_hjb_finite_list_example():
    # entries (A=I, xi=0) and (A=2I, xi=1), M=I in 2d: max(-2, -3) = -2, argmax 0
    op = HJBSupOperator([(np.eye(2), None, None, 0.0), (2 * np.eye(2), None, None, 1.0)],
                        dim=2, lam=1.0, Lam=2.0)
    x = np.zeros((1, 2))
    M = np.eye(2)[None]
    val = op.evaluate(x, np.zeros(1), np.zeros((1, 2)), M)
    assert np.isclose(val[0], -2.0)
    assert op.argmax_index(x, np.zeros(1), np.zeros((1, 2)), M)[0] == 0
    A, b, c, f = op.supremizer(x, np.zeros(1), np.zeros((1, 2)), M)
    assert np.allclose(A[0], np.eye(2))
    assert np.isclose(f[0], 0.0)


def test_pucci_evaluate_example():
    op = PucciOperator(0.1, 0.9, dim=2)
    x = np.zeros((1, 2))
    val = op.evaluate(x, np.zeros(1), np.zeros((1, 2)), np.diag([2.0, -1.0])[None])
    assert np.isclose(val[0], 0.7)


@pytest.mark.parametrize("make_op", [
    lambda: PucciOperator(0.1, 0.9, grad_coeff=0.4, dim=2),
    lambda: MongeAmpereOperator(xi=2.0, eps=1e-3, dim=2),
    lambda: LinearOperator(np.diag([0.5, 1.5]), b=[0.2, 0.1], c=0.3, dim=2),
    lambda: HJBSupOperator([(np.eye(2), [0.1, 0.0], 0.2, 1.0),
                            (np.diag([2.0, 1.0]), None, None, -0.5)],
                           dim=2, lam=1.0, Lam=2.0, gamma=0.1, mu=0.2),
])
def test_supremizer_consistency(make_op):
    # -A:M + b.p + c r + f equals evaluate at the linearization point
    op = make_op()
    rng = np.random.default_rng(13)
    m = 200
    x = rng.uniform(0, 1, (m, 2))
    r = rng.standard_normal(m)
    p = rng.standard_normal((m, 2))
    S = rng.standard_normal((m, 2, 2))
    M = S + np.swapaxes(S, 1, 2)
    A, b, c, f = op.supremizer(x, r, p, M)
    frozen = -np.einsum("mij,mij->m", A, M) + np.einsum("mi,mi->m", b, p) + c * r + f
    direct = op.evaluate(x, r, p, M)
    assert np.max(np.abs(frozen - direct)) < 1e-10 * max(1.0, np.max(np.abs(direct)))


@pytest.mark.parametrize("dim", [2, 3])
def test_supremizer_optimality_random_policies(dim):
    # no admissible random policy beats the supremizer
    rng = np.random.default_rng(17)
    lam, Lam = 0.1, 0.9
    pucci = PucciOperator(lam, Lam, dim=dim)
    ma = MongeAmpereOperator(xi=1.5, eps=1e-3, dim=dim)
    m = 1000
    S = rng.standard_normal((m, dim, dim))
    M = S + np.swapaxes(S, 1, 2)
    x = rng.uniform(0, 1, (m, dim))
    zeros = np.zeros((m, dim))
    val_p = pucci.evaluate(x, np.zeros(m), zeros, M)
    val_m = ma.evaluate(x, np.zeros(m), zeros, M)
    for _ in range(200):
        Ap = random_spd_bounded(rng, dim, lam, Lam)
        cand = -np.einsum("ij,mij->m", Ap, M)
        assert np.all(cand <= val_p + 1e-10)
        # random feasible trace-one policy for the MA operator
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        a = rng.uniform(1e-3, 1.0, dim)
        a = 1e-3 + (a / a.sum()) * (1 - dim * 1e-3)
        Am = q @ np.diag(a) @ q.T
        cand = -np.einsum("ij,mij->m", Am, M) + dim * (1.5 * np.prod(a)) ** (1 / dim)
        assert np.all(cand <= val_m + 1e-10)


# -- structure inequality ---------------------------------------------------------


def _samples(rng, dim, m):
    x = rng.uniform(0, 1, (m, dim))
    r = rng.standard_normal(m)
    s = rng.standard_normal(m)
    p = rng.standard_normal((m, dim))
    q = rng.standard_normal((m, dim))
    S1 = rng.standard_normal((m, dim, dim))
    S2 = rng.standard_normal((m, dim, dim))
    return x, r, p, S1 + np.swapaxes(S1, 1, 2), s, q, S2 + np.swapaxes(S2, 1, 2)


@pytest.mark.parametrize("make_op", [
    lambda: PucciOperator(0.1, 0.9, grad_coeff=0.5, dim=2),
    lambda: PucciOperator(0.2, 1.3, sign=-1, dim=3),
    lambda: LinearOperator(np.diag([0.3, 0.8]), b=[0.1, -0.2], c=0.4, dim=2),
    lambda: MongeAmpereOperator(xi=1.0, eps=1e-3, dim=2),
    lambda: MongeAmpereOperator(xi=3.0, eps=1e-3, dim=3),
    lambda: HJBSupOperator([(np.eye(2), None, None, 0.0),
                            (np.diag([1.5, 0.7]), [0.2, 0.0], 0.1, 0.3)],
                           dim=2, lam=0.7, Lam=1.5, gamma=0.2, mu=0.1),
])
def test_structure_inequality_holds(make_op):
    op = make_op()
    rng = np.random.default_rng(19)
    report = check_structure(op, _samples(rng, op.dim, 1000))
    assert report.ok, report.violations[:3]
    assert report.num_samples == 1000


def test_structure_violation_detected():
    # an operator claiming Lam but using eigenvalue Lam + 1 must be flagged
    bad = LinearOperator(np.diag([1.0, 2.0]), dim=2, lam=0.5, Lam=1.0)
    # rank-1 difference along the bad eigenvector
    e = np.zeros((1, 2, 2))
    e[0, 1, 1] = 1.0
    x = np.zeros((1, 2))
    z2 = np.zeros((1, 2))
    report = check_structure(bad, (x, np.zeros(1), z2, e, np.zeros(1), z2, np.zeros((1, 2, 2))))
    assert not report.ok
    assert report.max_violation > 0.5
