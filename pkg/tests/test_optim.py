import numpy as np
import pytest
from scipy.optimize import minimize as scipy_minimize

from fsseg.optim import (LineSearchError, NumericalError, OptimizerConfig, check_gradient,
                         minimize)


def half_norm(x):
    return 0.5 * float(x @ x), x.copy()


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def quadratic(dim, seed):
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(dim, dim))
    A = Q @ Q.T + dim * np.eye(dim) * 0.1
    c = rng.normal(size=dim)

    def f(x):
        d = x - c
        return 0.5 * float(d @ A @ d), A @ d
    return f, c


def test_identity_quadratic():
    x, tr = minimize(half_norm, np.array([3.0, 4.0]), OptimizerConfig(gradient_tolerance=1e-10))
    assert np.linalg.norm(x) < 1e-8
    assert tr.iterations <= 3 and tr.converged


def test_rosenbrock_matches_reference():
    x, tr = minimize(rosenbrock, np.array([-1.2, 1.0]),
                     OptimizerConfig(gradient_tolerance=1e-10, max_iterations=500))
    ref = scipy_minimize(rosenbrock, [-1.2, 1.0], jac=True, method="L-BFGS-B",
                         options={"gtol": 1e-12, "ftol": 1e-16})
    assert tr.converged
    assert np.max(np.abs(x - 1.0)) < 1e-6
    assert np.max(np.abs(x - ref.x)) < 1e-5


def test_zero_gradient_start():
    x, tr = minimize(half_norm, np.zeros(4))
    assert tr.iterations == 0 and tr.converged
    assert np.all(x == 0)


@pytest.mark.parametrize("dim,seed", [(2, 0), (10, 1), (50, 2), (100, 3)])
def test_random_positive_definite_quadratics(dim, seed):
    f, c = quadratic(dim, seed)
    x, tr = minimize(f, np.zeros(dim), OptimizerConfig(gradient_tolerance=1e-9,
                                                        max_iterations=2000))
    assert tr.converged and tr.final_gradient_norm < 1e-8
    assert np.allclose(x, c, atol=1e-6)
    values = [v for v, _, _ in tr.per_iteration]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_scale_invariance_of_argmin():
    f, _ = quadratic(8, 4)

    def f10(x):
        v, g = f(x)
        return 10 * v, 10 * g
    cfg = OptimizerConfig(gradient_tolerance=1e-9)
    x1, _ = minimize(f, np.ones(8), cfg)
    x2, _ = minimize(f10, np.ones(8), cfg)
    assert np.allclose(x1, x2, atol=1e-7)


def test_deterministic_trace():
    a = minimize(rosenbrock, np.array([-1.2, 1.0]))[1]
    b = minimize(rosenbrock, np.array([-1.2, 1.0]))[1]
    assert a.per_iteration == b.per_iteration


def test_non_finite_objective_aborts_with_trace():
    def f(x):
        if x[0] < 2.5:
            return float("nan"), np.ones_like(x)
        return half_norm(x)
    with pytest.raises(NumericalError) as exc:
        minimize(f, np.array([3.0, 4.0]))
    assert exc.value.trace is not None


def test_unbounded_direction_fails_line_search():
    # the reported gradient points the wrong way, so no step satisfies sufficient decrease
    def f(x):
        return float(np.sum(x)), np.full_like(x, -1.0)
    with pytest.raises(LineSearchError):
        minimize(f, np.zeros(3))


def test_max_iterations_not_converged():
    _, tr = minimize(rosenbrock, np.array([-1.2, 1.0]), OptimizerConfig(max_iterations=3))
    assert tr.iterations == 3 and not tr.converged


@pytest.mark.parametrize("kw", [dict(history_size=0), dict(wolfe_c1=0.95),
                                dict(wolfe_c2=1.0), dict(gradient_tolerance=-1.0),
                                dict(max_iterations=-1)])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        OptimizerConfig(**kw)


def test_gradient_checker():
    f, _ = quadratic(5, 0)
    x = np.random.default_rng(1).normal(size=5)
    assert check_gradient(f, x) < 1e-9

    def doubled(x):
        v, g = half_norm(x)
        return v, 2 * g
    err = check_gradient(doubled, np.array([3.0, -2.0, 5.0]))
    assert err == pytest.approx(0.5, abs=1e-6)


def test_trace_csv(tmp_path):
    _, tr = minimize(rosenbrock, np.array([-1.2, 1.0]))
    p = tmp_path / "t.csv"
    tr.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("iteration")
    assert len(lines) == tr.iterations + 2
