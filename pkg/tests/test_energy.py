import numpy as np
import pytest

from problems import problem_1d, problem_2d_crack, run_problem

from fkvsim.assembly import Material, ProblemData, scalar_tensor
from fkvsim.domain import CrackSchedule, build_interval_mesh
from fkvsim.energy import (
    continuous_energy,
    continuous_margin,
    discrete_energy_audit,
    initial_continuity_check,
    total_work,
    total_work_convolution_form,
)
from fkvsim.errors import GridMismatchError
from fkvsim.kernel import FractionalKernel, RegularizedKernel, sample_grid, \
    zero_kernel_samples
from fkvsim.presets import make_field
from fkvsim.stepper import SolverConfig, init, run


@pytest.fixture(scope="module")
def run_1d_motion():
    p = problem_1d(n=100, with_dirichlet_motion=True)
    return p, run_problem(p)


@pytest.fixture(scope="module")
def run_2d_crack():
    p = problem_2d_crack(n=100, cells=16)
    return p, run_problem(p)


class TestDiscreteAudit:
    def test_zero_data_all_zero(self):
        p = problem_1d(n=20, amplitude=0.0)
        traj = run_problem(p)
        led = discrete_energy_audit(traj, p["ks"])
        for name in led.NONNEGATIVE_TERMS:
            assert np.all(getattr(led, name) == 0.0)
        assert np.all(led.work == 0.0)
        assert np.all(led.margin == 0.0)

    def test_pure_elastodynamics_has_no_memory_terms(self):
        p = problem_1d(n=50, b=0.0)
        traj = run_problem(p)
        led = discrete_energy_audit(traj, p["ks"])
        for name in ("memory", "hist_tail", "hist_decay", "hist_convex",
                     "tau2_viscous", "tau2_history"):
            assert np.all(getattr(led, name) == 0.0)
        # ledger then reduces to kinetic + elastic + tau^2 terms vs initial energy
        assert led.max_relative_residual() <= 1e-11

    def test_equality_residual_and_margin(self, run_1d_motion):
        p, traj = run_1d_motion
        led = discrete_energy_audit(traj, p["ks"])
        assert led.max_relative_residual() <= 1e-10
        assert led.min_margin() >= -1e-10 * led.scale

    def test_2d_crack_equality(self, run_2d_crack):
        p, traj = run_2d_crack
        led = discrete_energy_audit(traj, p["ks"])
        assert led.max_relative_residual() <= 1e-8
        assert led.min_margin() >= -1e-10 * led.scale

    def test_sign_ledger(self, run_1d_motion, run_2d_crack):
        for p, traj in (run_1d_motion, run_2d_crack):
            led = discrete_energy_audit(traj, p["ks"])
            for name, worst in led.sign_violations().items():
                assert worst >= -1e-12 * led.scale, name
            m = p["ks"].sign_margins()
            assert max(m.values()) <= 1e-12

    def test_margin_not_worse_as_n_doubles(self):
        margins = []
        for n in (50, 100, 200):
            p = problem_1d(n=n, with_dirichlet_motion=True)
            led = discrete_energy_audit(run_problem(p), p["ks"])
            margins.append(led.min_margin() / led.scale)
        assert all(b >= a - 1e-12 for a, b in zip(margins, margins[1:])) or \
            all(m >= -1e-12 for m in margins)

    def test_grid_mismatch_rejected(self, run_1d_motion):
        p, traj = run_1d_motion
        other = sample_grid(p["kernel"], 50, 1.0)
        with pytest.raises(GridMismatchError):
            discrete_energy_audit(traj, other)


class TestTotalWork:
    def test_zero_data_zero_work(self):
        p = problem_1d(n=20, amplitude=0.0)
        traj = run_problem(p)
        assert total_work(traj, p["data"], traj.n) == 0.0

    def test_load_only_matches_trapezoid_oracle(self):
        # f linear in t: the cellwise trapezoid average equals the Gauss
        # average exactly, so the oracle reproduces the load term to roundoff
        mesh = build_interval_mesh(1.0, 16, dirichlet=("left", "right"))
        material = Material(elastic=scalar_tensor(1.0), viscous=scalar_tensor(0.5))
        kernel = RegularizedKernel(FractionalKernel(0.5, material.viscous), 1e-2)
        n = 80
        ks = sample_grid(kernel, n, 1.0)
        data = ProblemData(body_force=make_field(
            {"preset": "separable", "spatial": "sin_pi_x",
             "temporal": {"poly": [0.2, 0.6]}}, 1))
        traj = run(init(data, mesh, CrackSchedule(), material, ks, SolverConfig(n=n)))
        w = total_work(traj, data, n)
        M = traj.ctx.M
        tau = traj.tau
        oracle = 0.0
        for j in range(1, n + 1):
            fa = data.body_force.eval(mesh.nodes, 1, (j - 1) * tau)
            fb = data.body_force.eval(mesh.nodes, 1, j * tau)
            oracle += tau * float((M @ (0.5 * (fa + fb))) @ traj.du[j])
        assert w == pytest.approx(oracle, abs=1e-10 * max(1.0, abs(oracle)))

    def test_equals_cumulative_work_rows(self, run_1d_motion):
        p, traj = run_1d_motion
        led = discrete_energy_audit(traj, p["ks"])
        for i in (1, traj.n // 2, traj.n):
            assert total_work(traj, p["data"], i) == pytest.approx(
                led.work[i], abs=1e-12 * led.scale)

    def test_two_forms_agree_and_tighten(self):
        gaps = {}
        for n in (100, 200):
            p = problem_1d(n=n, with_dirichlet_motion=True)
            traj = run_problem(p)
            w1 = total_work(traj, p["data"], traj.n)
            w2 = total_work_convolution_form(traj, p["data"], traj.n)
            gaps[n] = abs(w1 - w2) / max(abs(w1), 1e-14)
        assert gaps[200] <= 5e-2
        assert gaps[200] < gaps[100]


class TestContinuousEnergy:
    def test_zero_data(self):
        p = problem_1d(n=20, amplitude=0.0)
        traj = run_problem(p)
        e, d = continuous_energy(traj, p["kernel"], traj.n)
        assert e == 0.0 and d == 0.0

    def test_static_state_has_no_memory(self):
        # constant-in-time trajectory: memory and dissipation terms vanish
        p = problem_1d(n=30)
        ctx = init(p["data"], p["mesh"], p["schedule"], p["material"], p["ks"],
                   p["config"])
        ctx.state.U[:] = ctx.u0[:, None]  # freeze the state by hand
        ctx.state.j = ctx.n
        traj = run(ctx)
        e, d = continuous_energy(traj, p["kernel"], traj.n)
        elastic = 0.5 * float(ctx.u0 @ (ctx.K_C @ ctx.u0))
        assert d == 0.0
        assert e == pytest.approx(elastic, rel=1e-12)

    def test_inequality_margin(self, run_2d_crack):
        p, traj = run_2d_crack
        led = discrete_energy_audit(traj, p["ks"])
        m = continuous_margin(traj, p["kernel"], p["data"], traj.n)
        assert m >= -1e-6 * led.scale

    def test_requires_matching_kernel(self, run_1d_motion):
        p, traj = run_1d_motion
        wrong = RegularizedKernel(
            FractionalKernel(0.5, p["material"].viscous), epsilon=0.5)
        with pytest.raises(GridMismatchError):
            continuous_energy(traj, wrong, traj.n)


class TestInitialContinuity:
    def test_zero_data(self):
        p = problem_1d(n=20, amplitude=0.0)
        traj = run_problem(p)
        assert initial_continuity_check(traj) == (0.0, 0.0)

    def test_affine_interpolant_bound(self, run_1d_motion):
        p, traj = run_1d_motion
        gap_u, _ = initial_continuity_check(traj, window=1)
        bound = traj.tau * max(traj.norm_H(traj.du[j]) for j in range(traj.n + 1))
        assert gap_u <= bound + 1e-14

    def test_halving_tau_halving_deviation(self):
        # the default window is 10 steps, i.e. t in [0, 10 tau]; launching
        # with a single-mode velocity keeps the deviation ~ |u1| t over the
        # window, so it halves with tau
        gaps = {}
        for n in (200, 400):
            p = problem_1d(n=n)
            data = ProblemData(initial_velocity=make_field(
                {"preset": "separable", "spatial": "sin_pi_x"}, 1))
            traj = run(init(data, p["mesh"], p["schedule"], p["material"],
                            p["ks"], p["config"]))
            gaps[n] = initial_continuity_check(traj)[0]
        ratio = gaps[200] / gaps[400]
        assert ratio == pytest.approx(2.0, rel=0.30)
