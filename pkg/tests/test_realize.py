import numpy as np
import pytest

import momentsteer as ms
from momentsteer.realize import fallback_reference

from conftest import SIGMA_A


def random_feasible_generators(rng, ref, grid, n=2, scale=0.3):
    """Random generators with the denominator well inside positivity."""
    from momentsteer.realize import quadratic_form_coeffs
    while True:
        lam = rng.normal(scale=scale, size=2 * n + 1)
        lam /= ref.scale ** np.arange(2 * n + 1)
        coeffs = quadratic_form_coeffs(lam, n)
        denom = 1.0 + np.polynomial.polynomial.polyval(grid.nodes, coeffs)
        if denom.min() > 0.1:
            return lam


class TestMomentMatrix:
    def test_order_one(self):
        np.testing.assert_array_equal(ms.moment_matrix([0, 1]),
                                      [[1, 0], [0, 1]])

    def test_order_two(self):
        np.testing.assert_array_equal(
            ms.moment_matrix([0, 1, 0, 3]),
            [[1, 0, 1], [0, 1, 0], [1, 0, 3]])

    def test_terminal_moments_positive_definite(self):
        mat = ms.moment_matrix(SIGMA_A)
        assert np.linalg.eigvalsh(mat)[0] > 0

    def test_multiplicities(self):
        np.testing.assert_array_equal(ms.multiplicities(2), [1, 2, 3, 2, 1])
        np.testing.assert_array_equal(ms.multiplicities(1), [1, 2, 1])


class TestQuadrature:
    def test_gaussian_grid_weights(self):
        ref = ms.GaussianRef(1.0, 4.0)
        grid = ms.build_grid(ref)
        assert np.all(grid.weights > 0)
        length = grid.nodes[-1] - grid.nodes[0]
        # composite Gauss-Legendre integrates constants exactly; the hull
        # is marginally narrower than the panel span
        span = 2 * 12.0 * ref.scale
        assert grid.weights.sum() == pytest.approx(span, rel=1e-12)
        assert length < span

    def test_polynomial_exactness(self):
        ref = ms.GaussianRef(0.0, 1.0)
        grid = ms.build_grid(ref, panels=4, nodes_per_panel=8, halfwidth=1.0)
        for degree in range(8):
            quad = float(grid.weights @ grid.nodes ** degree)
            exact = (1.0 ** (degree + 1) - (-1.0) ** (degree + 1)) / (degree + 1)
            assert quad == pytest.approx(exact, abs=1e-13)

    def test_cauchy_grid_transform(self):
        ref = ms.CauchyRef(0.5, 2.0)
        grid = ms.build_grid(ref)
        # the reference itself integrates to one on its own grid
        assert float(grid.weights @ ref.pdf(grid.nodes)) == pytest.approx(
            1.0, abs=1e-10)


class TestDualObjective:
    def test_zero_generators(self):
        ref = ms.GaussianRef(0.0, 1.0)
        grid = ms.build_grid(ref)
        val = ms.dual_objective(np.zeros(5), [0, 1, 0, 3], ref, grid)
        assert val == pytest.approx(1.0, abs=1e-12)

    def test_constant_shift(self):
        # lambda_0 = 1 doubles the denominator: trace 1, integral 1/2
        ref = ms.GaussianRef(0.0, 1.0)
        grid = ms.build_grid(ref)
        lam = np.array([1.0, 0, 0, 0, 0])
        val = ms.dual_objective(lam, [0, 1, 0, 3], ref, grid)
        assert val == pytest.approx(1.5, abs=1e-12)

    def test_infeasible_rejected(self):
        ref = ms.GaussianRef(0.0, 1.0)
        grid = ms.build_grid(ref)
        with pytest.raises(ms.InfeasibleLambda):
            ms.dual_objective([-2.0, 0, 0, 0, 0], [0, 1, 0, 3], ref, grid)

    def test_two_point_convexity(self):
        rng = np.random.default_rng(1)
        ref = ms.default_reference(SIGMA_A)
        grid = ms.build_grid(ref)
        for _ in range(100):
            lam1 = random_feasible_generators(rng, ref, grid)
            lam2 = random_feasible_generators(rng, ref, grid)
            t = rng.uniform(0.05, 0.95)
            mix = t * lam1 + (1 - t) * lam2
            j_mix = ms.dual_objective(mix, SIGMA_A, ref, grid)
            j_split = (t * ms.dual_objective(lam1, SIGMA_A, ref, grid)
                       + (1 - t) * ms.dual_objective(lam2, SIGMA_A, ref, grid))
            assert j_mix <= j_split + 1e-10

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        ref = ms.default_reference(SIGMA_A)
        grid = ms.build_grid(ref)
        for _ in range(100):
            lam = random_feasible_generators(rng, ref, grid, scale=0.15)
            grad = ms.dual_gradient(lam, SIGMA_A, ref, grid)
            fd = np.empty_like(grad)
            for k in range(lam.size):
                # step scaled per order: generator k multiplies u^k terms
                h = 6e-6 / ref.scale ** k
                up, down = lam.copy(), lam.copy()
                up[k] += h
                down[k] -= h
                fd[k] = (ms.dual_objective(up, SIGMA_A, ref, grid)
                         - ms.dual_objective(down, SIGMA_A, ref, grid)) / (2 * h)
            assert np.linalg.norm(fd - grad) / max(np.linalg.norm(grad), 1e-12) < 1e-5


class TestSolve:
    def test_identity_case(self):
        ref = ms.GaussianRef(0.0, 1.0)
        sigma = ms.distribution_moments(ms.Gaussian(0, 1), 2)
        result, _, grid = ms.solve_generator(sigma, ref)
        assert np.abs(result.lam).max() <= 1e-8

    def test_terminal_moments_with_given_reference(self):
        ref = ms.GaussianRef(-0.5, 9.0)
        result, _, grid = ms.solve_generator(SIGMA_A, ref)
        est = ms.make_density(result.lam, ref, grid)
        resid = ms.moment_residuals(est, SIGMA_A)
        scale = np.concatenate(([1.0], np.abs(SIGMA_A)))
        assert np.max(np.abs(resid) / scale) <= 1e-6

    def test_gradient_norm_reported(self):
        result, ref, grid = ms.solve_generator(SIGMA_A)
        assert result.gradient_norm <= 1e-9
        assert result.min_denominator > 0
        assert result.iterations >= 1

    def test_unreachable_tolerance_raises(self):
        with pytest.raises(ms.ConvergenceError):
            ms.solve_generator(SIGMA_A, tol=0.0)

    def test_homeomorphism_smoke(self):
        # nearby moment matrices give nearby generators, shrinking with
        # the perturbation over a decade of scales
        base, ref, grid = ms.solve_generator(SIGMA_A)
        deltas = []
        for eps in (1e-3, 1e-4):
            perturbed = SIGMA_A * (1 + eps)
            result, _, _ = ms.solve_generator(perturbed, ref, grid)
            deltas.append(np.linalg.norm(result.lam - base.lam))
        assert deltas[1] < deltas[0] * 0.2
        assert deltas[0] < 1e-2

    def test_hellinger_decreases_along_homotopy(self):
        ref = ms.GaussianRef(0.0, 2.0)
        target = ms.distribution_moments(
            ms.Mixture((0.5, 0.5), (ms.Gaussian(-1.5, 0.5),
                                    ms.Gaussian(1.5, 0.5))), 4)
        anchor = ms.distribution_moments(ms.Gaussian(0.0, 2.0), 4)
        values = []
        for t in np.linspace(1.0, 0.0, 5):
            sigma = t * target + (1 - t) * anchor
            result, _, grid = ms.solve_generator(sigma, ref)
            est = ms.make_density(result.lam, ref, grid)
            values.append(ms.squared_hellinger(ref.pdf, est.pdf, grid))
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))
        assert values[-1] <= 1e-10

    def test_cauchy_reference_heavy_tail_target(self):
        target = np.array([0.1849330843853665, 1.3936076150944337,
                           0.0688444537355716, 10.294966429010297])
        ref = fallback_reference(target)
        assert isinstance(ref, ms.CauchyRef)
        result, _, grid = ms.solve_generator(target, ref)
        est = ms.make_density(result.lam, ref, grid)
        assert np.abs(ms.moment_residuals(est, target)).max() <= 1e-6

    def test_fallback_engages(self):
        target = np.array([0.1849330843853665, 1.3936076150944337,
                           0.0688444537355716, 10.294966429010297])
        est, result = ms.realize_control(target)
        assert isinstance(est.reference, ms.CauchyRef)
        assert np.abs(ms.moment_residuals(est, target)).max() <= 1e-6


class TestDensityEstimate:
    def test_zero_generators_reproduce_reference(self):
        ref = ms.GaussianRef(0.3, 2.0)
        grid = ms.build_grid(ref)
        est = ms.make_density(np.zeros(5), ref, grid)
        u = np.linspace(-3, 3, 50)
        np.testing.assert_allclose(est.pdf(u), ref.pdf(u), rtol=1e-14)

    def test_constant_denominator(self):
        ref = ms.GaussianRef(0.0, 1.0)
        grid = ms.build_grid(ref)
        est = ms.make_density(np.array([1.0, 0, 0, 0, 0]), ref, grid)
        u = np.linspace(-2, 2, 20)
        np.testing.assert_allclose(est.pdf(u), ref.pdf(u) / 4.0, rtol=1e-14)

    def test_zero_outside_support(self):
        result, ref, grid = ms.solve_generator(SIGMA_A)
        est = ms.make_density(result.lam, ref, grid)
        lo, hi = est.support
        assert est.pdf(np.array([lo - 1.0]))[0] == 0.0
        assert est.pdf(np.array([hi + 1.0]))[0] == 0.0

    def test_terminal_density_bimodal(self):
        est, _ = ms.realize_control(SIGMA_A)
        u = np.linspace(-8, 7, 3001)
        p = est.pdf(u)
        rising = np.diff(p)
        peaks = u[1:-1][(rising[:-1] > 0) & (rising[1:] <= 0)]
        assert any(abs(v + 3) <= 0.5 for v in peaks)
        assert any(abs(v - 2) <= 0.5 for v in peaks)

    def test_nonnegative_and_normalized(self):
        est, _ = ms.realize_control(SIGMA_A)
        values = est.pdf(est.grid.nodes)
        assert np.all(values >= 0)
        mass = float(est.grid.weights @ values)
        assert mass == pytest.approx(1.0, abs=1e-6)


class TestHellinger:
    def test_identical_densities(self):
        ref = ms.GaussianRef(0.0, 1.0)
        grid = ms.build_grid(ref)
        assert ms.squared_hellinger(ref.pdf, ref.pdf, grid) == 0.0

    def test_gaussian_pair_closed_form(self):
        p = ms.GaussianRef(0.0, 1.0)
        q = ms.GaussianRef(0.0, 1.25)
        grid = ms.build_grid(p, halfwidth=14.0)
        s1, s2 = 1.0, np.sqrt(1.25)
        bc = np.sqrt(2 * s1 * s2 / (s1 ** 2 + s2 ** 2))
        assert ms.squared_hellinger(p.pdf, q.pdf, grid) == pytest.approx(
            2 - 2 * bc, abs=1e-9)
        assert 2 - 2 * bc == pytest.approx(0.0062, abs=1e-4)

    def test_bounded_by_two(self):
        rng = np.random.default_rng(3)
        grid = ms.build_grid(ms.GaussianRef(0.0, 4.0))
        for _ in range(20):
            p = ms.GaussianRef(rng.uniform(-3, 3), rng.uniform(0.2, 3.0))
            q = ms.GaussianRef(rng.uniform(-3, 3), rng.uniform(0.2, 3.0))
            val = ms.squared_hellinger(p.pdf, q.pdf, grid)
            assert 0.0 <= val <= 2.0 + 1e-12

    def test_negative_density_rejected(self):
        grid = ms.build_grid(ms.GaussianRef(0.0, 1.0))
        with pytest.raises(ValueError):
            ms.squared_hellinger(lambda u: -np.ones_like(u),
                                 lambda u: np.ones_like(u), grid)


class TestVerification:
    def test_zero_generators_residual(self):
        ref = ms.GaussianRef(0.0, 1.0)
        grid = ms.build_grid(ref)
        est = ms.make_density(np.zeros(5), ref, grid)
        sigma = SIGMA_A
        resid = ms.moment_residuals(est, sigma)
        expected = np.concatenate(
            ([0.0], ms.distribution_moments(ms.Gaussian(0, 1), 4) - sigma))
        np.testing.assert_allclose(resid, expected, atol=1e-10)

    def test_converged_normalization_row(self):
        est, _ = ms.realize_control(SIGMA_A)
        resid = ms.moment_residuals(est, SIGMA_A)
        assert abs(resid[0]) <= 1e-8

    def test_csv_dump(self, tmp_path):
        est, _ = ms.realize_control(SIGMA_A)
        path = tmp_path / "density.csv"
        ms.write_density_csv(est, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "u,density"
        assert len(lines) == est.grid.nodes.size + 1
        u, p = map(float, lines[1].split(","))
        assert p == pytest.approx(est.pdf(np.array([u]))[0], rel=1e-15)
