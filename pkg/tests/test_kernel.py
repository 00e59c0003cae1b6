import math

import numpy as np
import pytest
from scipy.integrate import quad

from fkvsim.errors import SingularKernelError
from fkvsim.kernel import (
    ConstantProfile,
    ExponentialProfile,
    FractionalKernel,
    RegularizedKernel,
    SmoothKernel,
    caputo_eval,
    gamma_fn,
    kernel_eval,
    kernel_positivity_matrix,
    rho,
    riemann_liouville_eval,
    sample_grid,
)


def caputo_oracle(gdot, alpha, t):
    """Adaptive quadrature of the defining integral, singular weight handled
    by scipy's algebraic-weight rule.  Independent of the L1 grid scheme."""
    val, _ = quad(gdot, 0.0, t, weight="alg", wvar=(0.0, -alpha))
    return val / math.gamma(1.0 - alpha)


class TestGamma:
    def test_known_values(self):
        assert gamma_fn(1.0) == pytest.approx(1.0, rel=1e-14)
        assert gamma_fn(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-13)
        assert gamma_fn(5.0) == pytest.approx(24.0, rel=1e-13)

    def test_against_stdlib_on_range(self):
        for x in np.linspace(0.1, 30.0, 400):
            assert gamma_fn(float(x)) == pytest.approx(math.gamma(x), rel=1e-12)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            gamma_fn(0.0)
        with pytest.raises(ValueError):
            gamma_fn(-2.5)


class TestRho:
    def test_values(self):
        assert rho(0.5, 1.0) == pytest.approx(1.0 / math.sqrt(math.pi), rel=1e-13)
        assert rho(0.5, 4.0) == pytest.approx(0.5 / math.sqrt(math.pi), rel=1e-13)

    def test_monotone_decreasing(self):
        ts = np.linspace(0.05, 4.0, 50)
        vals = [rho(0.3, t) for t in ts]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert min(vals) > 0.0

    def test_convexity_random_triples(self):
        rng = np.random.default_rng(12345)
        for alpha in (0.1, 0.5, 0.9):
            for _ in range(200):
                t1, t2 = np.sort(rng.uniform(0.01, 5.0, size=2))
                lam = rng.uniform()
                mid = lam * t1 + (1.0 - lam) * t2
                assert rho(alpha, mid) <= lam * rho(alpha, t1) + (1 - lam) * rho(alpha, t2) + 1e-12

    def test_domain_errors(self):
        with pytest.raises(SingularKernelError):
            rho(0.5, 0.0)
        with pytest.raises(ValueError):
            rho(1.5, 1.0)
        with pytest.raises(ValueError):
            rho(0.0, 1.0)


class TestKernelEval:
    def test_fractional_identity_tensor(self):
        k = FractionalKernel(alpha=0.5, visc_tensor=np.eye(3))
        val = kernel_eval(k, 1.0)
        assert np.allclose(val, np.eye(3) / math.sqrt(math.pi), rtol=1e-13)

    def test_shift_definition(self):
        k = FractionalKernel(alpha=0.5, visc_tensor=np.eye(3), horizon=2.0)
        reg = RegularizedKernel(k, epsilon=1.0)
        assert np.allclose(kernel_eval(reg, 0.0), kernel_eval(k, 1.0), rtol=1e-14)

    def test_scalar_factorization(self):
        b = 2.5
        k = FractionalKernel(alpha=0.3, visc_tensor=b * np.eye(1))
        for t in (0.2, 1.0, 3.7):
            assert kernel_eval(k, t)[0, 0] == pytest.approx(b * rho(0.3, t), rel=1e-14)

    def test_singularity_at_zero(self):
        k = FractionalKernel(alpha=0.5, visc_tensor=np.eye(1))
        with pytest.raises(SingularKernelError):
            kernel_eval(k, 0.0)

    def test_fractional_base_requires_shift(self):
        k = FractionalKernel(alpha=0.5, visc_tensor=np.eye(1))
        with pytest.raises(SingularKernelError):
            RegularizedKernel(k, epsilon=0.0)
        with pytest.raises(ValueError):
            RegularizedKernel(k, epsilon=1.5)  # beyond horizon

    def test_smooth_base_allows_zero_shift(self):
        k = SmoothKernel(ExponentialProfile(beta=1.0), np.eye(1))
        reg = RegularizedKernel(k, epsilon=0.0)
        assert reg.scalar(0.0) == pytest.approx(1.0)

    def test_tensor_validation(self):
        with pytest.raises(ValueError):
            FractionalKernel(alpha=0.5, visc_tensor=np.array([[0.0, 1.0], [-1.0, 0.0]]))
        with pytest.raises(ValueError):
            FractionalKernel(alpha=0.5, visc_tensor=-np.eye(2))


class TestSampleGrid:
    def test_constant_kernel_has_zero_differences(self):
        k = RegularizedKernel(SmoothKernel(ConstantProfile(3.0), np.eye(3)))
        s = sample_grid(k, 16, 2.0)
        assert np.all(s.g == 3.0)
        assert np.all(s.dg == 0.0)
        assert np.all(s.d2g == 0.0)

    def test_exponential_first_difference(self):
        k = RegularizedKernel(SmoothKernel(ExponentialProfile(beta=1.0), np.eye(2)))
        s = sample_grid(k, 4, 1.0)
        expected = (math.exp(-0.25) - 1.0) / 0.25
        assert s.dg[1] == pytest.approx(expected, rel=1e-13)
        assert s.dg[0] == 0.0

    @pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
    def test_sign_certificates_fractional(self, alpha):
        k = RegularizedKernel(FractionalKernel(alpha, 1.7 * np.eye(3)), epsilon=1e-3)
        rng = np.random.default_rng(7)
        for n in (5, 64, 1000, 10000):
            s = sample_grid(k, n, 1.0)
            margins = s.sign_margins()
            assert margins["g"] <= 1e-12
            assert margins["dg"] <= 1e-12
            assert margins["d2g"] <= 1e-12
            # quadratic-form reading on random symmetric-matrix coordinates
            xi = rng.standard_normal(3)
            j = rng.integers(1, n + 1)
            assert s.dg[j] * (xi @ s.visc_tensor @ xi) <= 1e-12

    def test_grid_metadata(self):
        k = RegularizedKernel(SmoothKernel(ConstantProfile(1.0), np.eye(1)))
        s = sample_grid(k, 8, 4.0)
        assert s.n == 8
        assert s.tau == pytest.approx(0.5)
        assert s.t_final == pytest.approx(4.0)


class TestCaputo:
    def test_constant_path_is_flat(self):
        g = np.full(11, 4.2)
        out = caputo_eval(g, 0.5, 0.1)
        assert np.all(out == 0.0)

    def test_linear_path_alpha_half(self):
        n = 2000
        t = np.linspace(0.0, 1.0, n + 1)
        out = caputo_eval(t, 0.5, 1.0 / n)
        assert out[-1] == pytest.approx(2.0 / math.sqrt(math.pi), rel=1e-3)
        oracle = caputo_oracle(lambda r: 1.0, 0.5, 1.0)
        assert out[-1] == pytest.approx(oracle, rel=1e-3)

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
    @pytest.mark.parametrize("p", [1, 2])
    def test_monomials_match_quadrature_oracle(self, alpha, p):
        n = 2000
        t = np.linspace(0.0, 1.0, n + 1)
        out = caputo_eval(t**p, alpha, 1.0 / n)
        oracle = caputo_oracle(lambda r: p * r ** (p - 1), alpha, 1.0)
        assert out[-1] == pytest.approx(oracle, rel=1e-3)

    def test_vector_paths(self):
        n = 50
        t = np.linspace(0.0, 1.0, n + 1)
        stacked = np.stack([t, t**2], axis=1)
        out = caputo_eval(stacked, 0.5, 1.0 / n)
        assert np.allclose(out[:, 0], caputo_eval(t, 0.5, 1.0 / n))
        assert np.allclose(out[:, 1], caputo_eval(t**2, 0.5, 1.0 / n))

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            caputo_eval(np.array([1.0]), 0.5, 0.1)


class TestRiemannLiouville:
    def test_zero_path(self):
        out = riemann_liouville_eval(np.zeros(21), 0.5, 0.05)
        assert np.all(out == 0.0)

    def test_constant_path(self):
        n = 2000
        g = np.ones(n + 1)
        out = riemann_liouville_eval(g, 0.5, 1.0 / n)
        assert out[-1] == pytest.approx(1.0 / math.sqrt(math.pi), rel=1e-3)

    def test_coincides_with_caputo_when_path_starts_at_zero(self):
        n = 2000
        t = np.linspace(0.0, 1.0, n + 1)
        rl = riemann_liouville_eval(t, 0.5, 1.0 / n)
        cap = caputo_eval(t, 0.5, 1.0 / n)
        i0 = n // 10  # away from the t = 0 boundary layer
        rel = np.abs(rl[i0:] - cap[i0:]) / np.abs(cap[i0:]).max()
        assert rel.max() <= 1e-3

    @pytest.mark.parametrize("alpha", [0.3, 0.6])
    def test_relation_to_caputo_and_rate(self, alpha):
        # residual of RL = Caputo + g(0) t^(-alpha)/Gamma(1-alpha), max-norm
        # over nodes away from 0, halving under grid refinement
        def residual(n):
            t = np.linspace(0.0, 1.0, n + 1)
            g = 1.0 + t + 0.5 * np.sin(2.0 * t)
            rl = riemann_liouville_eval(g, alpha, 1.0 / n)
            cap = caputo_eval(g, alpha, 1.0 / n)
            i0 = max(2, n // 5)
            extra = g[0] * t[i0:] ** (-alpha) / math.gamma(1.0 - alpha)
            return np.abs(rl[i0:] - cap[i0:] - extra).max()

        r1, r2 = residual(250), residual(500)
        assert r2 <= r1 / 1.5
        assert residual(2000) <= 1e-3


class TestPositivityMatrix:
    def test_single_entry(self):
        k = RegularizedKernel(FractionalKernel(0.5, np.eye(1)), epsilon=0.1)
        Q = kernel_positivity_matrix(k, 1, 0.25)
        assert Q.shape == (1, 1)
        assert Q[0, 0] == pytest.approx(0.25**2 * k.scalar(0.0), rel=1e-14)
        assert Q[0, 0] >= 0.0

    def test_constant_kernel_rank_one(self):
        c, n, tau = 2.0, 6, 0.5
        k = RegularizedKernel(SmoothKernel(ConstantProfile(c), np.eye(1)))
        Q = kernel_positivity_matrix(k, n, tau)
        assert np.allclose(Q, c * tau**2 * np.ones((n, n)))
        eigs = np.sort(np.linalg.eigvalsh(Q))
        assert eigs[-1] == pytest.approx(n * c * tau**2, rel=1e-12)
        assert eigs[0] >= -1e-14 * abs(eigs[-1])

    def test_fractional_minimum_eigenvalue(self):
        k = RegularizedKernel(FractionalKernel(0.5, np.eye(1)), epsilon=1e-3)
        n = 64
        Q = kernel_positivity_matrix(k, n, 1.0 / n)
        eigs = np.linalg.eigvalsh(Q)
        assert eigs.min() >= -1e-10 * np.abs(eigs).max()


def test_monotone_decrease_of_kernel_values():
    k = FractionalKernel(0.35, np.diag([1.0, 2.0, 0.5]))
    rng = np.random.default_rng(3)
    ts = np.sort(rng.uniform(0.01, 2.0, size=20))
    for xi in rng.standard_normal((10, 3)):
        q = [xi @ kernel_eval(k, t) @ xi for t in ts]
        assert all(a >= b >= 0.0 for a, b in zip(q, q[1:]))
