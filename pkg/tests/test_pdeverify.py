import math

import numpy as np
import pytest

from dinilab import modulus as mod
from dinilab import pdeverify as pde
from dinilab.errors import ConfigError, DomainError

LINEAR = mod.DegeneracyLaw(mod.power(1.0))


@pytest.fixture(scope="module")
def benchmark_solution():
    return pde.solve(pde.benchmark_problem(h=1e-3))


def test_linear_data_is_reproduced_in_1d():
    p = pde.ProblemSpec(1, LINEAR, 0.0, lambda x: 0.3 * x + 0.1, h=0.05)
    sol = pde.solve(p)
    x, u = sol.points()
    assert np.max(np.abs(u - (0.3 * x[:, 0] + 0.1))) < 1e-10


def test_benchmark_error_and_mesh_ratio(benchmark_solution):
    x, u = benchmark_solution.points()
    err = np.max(np.abs(u - pde.benchmark_exact(x[:, 0])))
    assert err <= 5e-3
    coarse = pde.solve(pde.benchmark_problem(h=2e-3))
    xc, uc = coarse.points()
    err_c = np.max(np.abs(uc - pde.benchmark_exact(xc[:, 0])))
    assert err_c / err >= 1.8


def test_solution_is_symmetric(benchmark_solution):
    u = benchmark_solution.values
    assert np.max(np.abs(u - u[::-1])) < 1e-9


def test_large_shift_keeps_harmonic_data_fixed():
    for xi in (0.0, 100.0):
        p = pde.ProblemSpec(1, LINEAR, 0.0, lambda x: 2.0 * x, xi=xi, h=0.02)
        _, u = pde.solve(p).points()
        assert np.allclose(u, 2.0 * np.linspace(-1, 1, u.size), atol=1e-10)


def test_two_dimensional_linear_data_first_order():
    errs = []
    for h in (0.05, 0.025):
        p = pde.ProblemSpec(2, LINEAR, 0.0, lambda x, y: x + 0.5 * y, h=h)
        sol = pde.solve(p)
        pts, u = sol.points()
        errs.append(np.max(np.abs(u - (pts[:, 0] + 0.5 * pts[:, 1]))))
    assert errs[1] < errs[0] < 0.1


def test_problem_validation():
    with pytest.raises(ConfigError):
        pde.ProblemSpec(3, LINEAR)
    with pytest.raises(ConfigError):
        pde.ProblemSpec(1, LINEAR, h=0.0)
    with pytest.raises(ConfigError):
        pde.ProblemSpec(1, LINEAR, xi=math.inf)


def test_normalize_zero_source():
    p = pde.ProblemSpec(1, LINEAR, 0.0, lambda x: np.ones_like(x))
    q, rec = pde.normalize_problem(p, 0.5, u_bound=1.0)
    assert rec.K == 1.0 and rec.r == 0.5
    assert q.source == 0.0


def test_normalize_scaling_record():
    p = pde.ProblemSpec(1, LINEAR, 1.0, lambda x: 3.0 * np.ones_like(x))
    q, rec = pde.normalize_problem(p, 0.1, u_bound=3.0)
    assert rec.K == pytest.approx(4.0)
    assert rec.r == pytest.approx(0.1)
    assert abs(q.source) == pytest.approx(0.01 / 4.0)
    assert abs(q.source) < 0.1


def test_normalize_inverse_identity():
    p = pde.ProblemSpec(1, LINEAR, 1.0, lambda x: np.zeros_like(x))
    q, rec = pde.normalize_problem(p, 0.1, u_bound=0.0)  # K = 1, K / r = 10
    for y in (0.1, 0.5):
        got = mod.inverse_evaluate(q.sigma.sigma, y)
        assert got == pytest.approx((rec.r / rec.K) * mod.inverse_evaluate(LINEAR.sigma, y), rel=1e-12)


def test_minimax_affine_oracle():
    x = np.linspace(-1, 1, 201)[:, None]
    E, A, B = pde.minimax_affine(x, x[:, 0] ** 2)
    # best affine fit of x^2 on [-1, 1] is 1/2 with error 1/2
    assert E == pytest.approx(0.5, abs=1e-9)
    assert A == pytest.approx(0.5, abs=1e-9)
    assert abs(B[0]) < 1e-9


def test_holder_seminorm_examples():
    p = pde.ProblemSpec(1, LINEAR, 0.0, lambda x: x, h=0.01)
    sol = pde.solve(p)
    assert pde.holder_seminorm(sol, 0.0, 0.5, 1.0) == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(DomainError):
        pde.holder_seminorm(sol, 0.0, 0.5, 1.5)


def test_tangent_planes_on_exact_profile(benchmark_solution):
    rep = pde.fit_tangent_planes(benchmark_solution, [0.0], 0.25, 4)
    ne = rep.normalized_errors()
    assert np.all(np.diff(ne) < 0)


def test_tangent_planes_reject_bad_ratio(benchmark_solution):
    with pytest.raises(DomainError):
        pde.fit_tangent_planes(benchmark_solution, [0.0], 1.5, 3)
    with pytest.raises(DomainError):
        pde.fit_tangent_planes(benchmark_solution, [0.0, 0.0], 0.5, 3)
