import numpy as np
import pytest

from problems import problem_1d, problem_2d_crack

from fkvsim.analysis import (
    ConvergenceReport,
    ProblemSetup,
    epsilon_sweep,
    manufactured_convergence,
    positivity_test,
    uniqueness_check,
)
from fkvsim.domain import CrackSchedule
from fkvsim.errors import MovingCrackError
from fkvsim.kernel import ConstantProfile, FractionalKernel, RegularizedKernel, \
    SmoothKernel


def setup_from(p, tol="direct"):
    return ProblemSetup(mesh=p["mesh"], schedule=p["schedule"], material=p["material"],
                        data=p["data"], kernel=p["kernel"], t_final=1.0,
                        linear_tol=tol)


class TestEpsilonSweep:
    def test_no_kernel_rejected(self):
        p = problem_1d(n=20, b=0.0)
        with pytest.raises(ValueError, match="kernel"):
            epsilon_sweep(setup_from(p), 0.1, 3, 20)

    def test_diffs_strictly_decreasing(self):
        p = problem_1d(n=100)
        rep = epsilon_sweep(setup_from(p), 0.1, 4, 100)
        assert rep.strictly_decreasing
        assert np.all(rep.diffs_uH > 0.0)
        assert np.all(rep.diffs_strain >= 0.0)
        assert np.all(np.diff(rep.epsilons) < 0.0)

    def test_two_grid_stability(self):
        p = problem_1d(n=100)
        ps = setup_from(p)
        coarse = epsilon_sweep(ps, 0.1, 3, 100)
        fine = epsilon_sweep(ps, 0.1, 3, 200)
        assert np.all(fine.diffs_uH <= 1.10 * coarse.diffs_uH)

    def test_needs_two_levels(self):
        p = problem_1d(n=20)
        with pytest.raises(ValueError, match="levels"):
            epsilon_sweep(setup_from(p), 0.1, 1, 20)


class TestPositivity:
    def test_constant_kernel_exact(self):
        k = RegularizedKernel(SmoothKernel(ConstantProfile(2.0), np.eye(1)))
        rep = positivity_test(k, 32)
        assert rep.worst_ratio >= -1e-14

    @pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
    def test_fractional_psd(self, alpha):
        k = RegularizedKernel(FractionalKernel(alpha, np.eye(1)), 1e-3)
        rep = positivity_test(k, 64)
        assert rep.worst_ratio >= -1e-10

    def test_alpha_grid_full_certificate(self):
        for alpha in np.arange(0.1, 0.95, 0.1):
            k = RegularizedKernel(FractionalKernel(float(alpha), np.eye(1)), 1e-3)
            rep = positivity_test(k, 256)
            assert rep.worst_ratio >= -1e-10, f"alpha = {alpha}"

    def test_identity_two_resolution_ratio(self):
        k = RegularizedKernel(FractionalKernel(0.5, np.eye(1)), 1e-3)
        rep = positivity_test(k, 8)
        assert rep.identity_grids == (128, 256)
        assert rep.identity_ratio >= 1.5


class TestUniqueness:
    def test_identical_runs_bitwise(self):
        p = problem_2d_crack(n=40, cells=8)
        rep = uniqueness_check(setup_from(p), 40, variant="identical")
        assert rep.max_rel_diff == 0.0

    def test_permuted_assembly_direct_solve(self):
        p = problem_2d_crack(n=40, cells=8)
        rep = uniqueness_check(setup_from(p), 40, variant="permuted")
        assert rep.max_rel_diff <= 1e-10

    def test_moving_crack_refused(self):
        p = problem_2d_crack(n=40, cells=8,
                             schedule=CrackSchedule({"s1": 0.3, "s2": 0.6}))
        with pytest.raises(MovingCrackError):
            uniqueness_check(setup_from(p), 40)

    def test_release_beyond_horizon_is_fixed(self):
        # a release after T never happens within the horizon: still a fixed crack
        p = problem_2d_crack(n=20, cells=8,
                             schedule=CrackSchedule({"s1": 0.0, "s2": 2.5}))
        rep = uniqueness_check(setup_from(p), 20, variant="identical")
        assert rep.max_rel_diff == 0.0

    def test_difference_scales_with_linear_tol(self):
        # CG stopping at the tolerance: loosening by 10x should move the
        # trajectory discrepancy by roughly that factor
        p = problem_1d(n=40, n_el=400)
        ps = setup_from(p)
        d5 = uniqueness_check(ps, 40, variant="cg", linear_tol=1e-5).max_rel_diff
        d6 = uniqueness_check(ps, 40, variant="cg", linear_tol=1e-6).max_rel_diff
        d7 = uniqueness_check(ps, 40, variant="cg", linear_tol=1e-7).max_rel_diff
        assert 2.0 <= d5 / d6 <= 60.0
        assert 2.0 <= d6 / d7 <= 60.0


class TestManufactured:
    def test_static_exact(self):
        rep = manufactured_convergence("static", (50, 100))
        assert np.all(rep.errors <= 1e-10)

    def test_translation_exact(self):
        rep = manufactured_convergence("translation", (50, 100))
        assert np.all(rep.errors <= 1e-10)

    def test_wave_first_order(self):
        rep = manufactured_convergence("wave", (100, 200, 400))
        assert rep.observed_order >= 0.8

    def test_unknown_case(self):
        with pytest.raises(ValueError, match="oracle case"):
            manufactured_convergence("bogus")
