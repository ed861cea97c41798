import numpy as np
import pytest

from lirkamf.analysis import stability_amf, stability_exact
from lirkamf.integrator import (
    MAX_REFINEMENTS,
    SemiLinearProblem,
    Strategy,
    calvo_correction,
    integrate,
    relative_error,
    step_amf,
    step_amf_calvo,
    step_exact,
)
from lirkamf.operators import GeneralSparse
from lirkamf.problems import build_allen_cahn, build_brusselator
from lirkamf.tableaus import lirk3, lirk4

TABLEAUS = [lirk3, lirk4]
ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def scalar_realization(h, w, *zs):
    """Real 2-vector realization of ``y' = sum(z_r / h) y + i (w / h) y``."""
    parts = [GeneralSparse(np.eye(2) * z / h) for z in zs]

    def f(y, t):
        return (w / h) * (ROT @ y)

    return SemiLinearProblem(parts, f, np.array([1.0, 0.0]))


def as_complex(y):
    return y[0] + 1j * y[1]


def random_problem(seed, n=None, parts=1):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 33))
    ops = []
    for _ in range(parts):
        Q = rng.standard_normal((n, n))
        ops.append(GeneralSparse(-(Q @ Q.T) - np.eye(n)))
    K = rng.standard_normal((n, n)) / n

    def f(y, t):
        return np.tanh(K @ y) + np.sin(t)

    return SemiLinearProblem(ops, f, rng.standard_normal(n), tspan=(0.0, 0.5))


# ------------------------------------------------------------------ strategy


def test_strategy_parse():
    assert Strategy.parse("exact") == Strategy("exact")
    assert Strategy.parse("amf") == Strategy("amf", 0)
    assert Strategy.parse("amfr2") == Strategy("amf", 2)
    assert Strategy.parse("amf-calvo").kind == "amf-calvo"
    assert Strategy("amf", 1).label == "amfr1"
    with pytest.raises(ValueError):
        Strategy("amf", MAX_REFINEMENTS + 1)
    with pytest.raises(ValueError):
        Strategy.parse("newton")


# --------------------------------------------------------------------- steps


@pytest.mark.parametrize("factory", TABLEAUS)
def test_zero_vector_field(factory):
    y0 = np.arange(4.0)
    p = SemiLinearProblem([GeneralSparse.zeros(4)], lambda y, t: np.zeros_like(y), y0)
    np.testing.assert_array_equal(step_exact(p, factory(), y0, 0.0, 0.1), y0)


@pytest.mark.parametrize("factory", TABLEAUS)
def test_scalar_step_matches_stability_function(factory):
    lam, h = -2.0, 0.5
    p = SemiLinearProblem([GeneralSparse(np.array([[lam]]))], lambda y, t: 0 * y, np.array([1.0]))
    y1 = step_exact(p, factory(), p.initial, 0.0, h)
    R = stability_exact(factory(), h * lam, 0.0)
    assert y1[0] == pytest.approx(R.real, rel=1e-13)


@pytest.mark.parametrize("factory", TABLEAUS)
def test_stability_duality_random(factory):
    rng = np.random.default_rng(42)
    t = factory()
    h = 0.1
    for _ in range(20):
        z1, z2 = -rng.uniform(0, 5, 2)
        w = rng.uniform(-1, 1)
        p = scalar_realization(h, w, z1 + z2)
        got = as_complex(step_exact(p, t, p.initial, 0.0, h))
        assert abs(got - stability_exact(t, z1 + z2, w)) <= 1e-12 * abs(got)
        p2 = scalar_realization(h, w, z1, z2)
        for k in (0, 1):
            got = as_complex(step_amf(p2, t, p2.initial, 0.0, h, k=k))
            assert abs(got - stability_amf(t, z1, z2, w, k)) <= 1e-12 * abs(got)


def test_amf_duality_example():
    h = 0.1
    p = scalar_realization(h, 0.0, -1.0, -1.0)
    got = as_complex(step_amf(p, lirk3(), p.initial, 0.0, h, k=0))
    ref = stability_amf(lirk3(), -1.0, -1.0, 0.0, 0)
    assert abs(got - ref) <= 1e-12 * abs(ref)


@pytest.mark.parametrize("seed", range(5))
def test_degeneracy_single_part(seed):
    p = random_problem(seed)
    t = lirk3()
    y0 = p.initial
    ref = step_exact(p, t, y0, 0.0, 0.1)
    for k in range(3):
        assert relative_error(step_amf(p, t, y0, 0.0, 0.1, k), ref) <= 1e-13
    assert relative_error(step_amf_calvo(p, t, y0, 0.0, 0.1), ref) <= 1e-13
    assert np.linalg.norm(calvo_correction(p, t, y0, 0.0, 0.1)) == 0.0


@pytest.mark.parametrize("factory", TABLEAUS)
def test_linear_decay_is_monotone(factory):
    rng = np.random.default_rng(7)
    for _ in range(5):
        n = int(rng.integers(2, 33))
        Q = rng.standard_normal((n, n))
        L = -(Q @ Q.T) - 0.1 * np.eye(n)
        p = SemiLinearProblem([GeneralSparse(L)], lambda y, t: 0 * y, rng.standard_normal(n))
        y = p.initial
        for h in (0.01, 0.5, 10.0):
            y1 = step_exact(p, factory(), y, 0.0, h)
            assert np.linalg.norm(y1) <= np.linalg.norm(y) * (1 + 1e-14)


def test_calvo_correction_scaling():
    build = build_allen_cahn(9)
    p, t = build.problem, lirk3()
    y0 = p.initial

    def ratio(form, h):
        a = np.linalg.norm(calvo_correction(p, t, y0, 0.0, h, form))
        b = np.linalg.norm(calvo_correction(p, t, y0, 0.0, h / 2, form))
        return a / b

    h = 1e-5
    assert ratio("damped", h) == pytest.approx(4.0, rel=0.02)
    assert ratio("single", h) == pytest.approx(4.0, rel=0.02)
    assert ratio("scaled", h) == pytest.approx(8.0, rel=0.02)


# ---------------------------------------------------------------- integrate


def test_integrate_one_step_equals_step():
    p = random_problem(3)
    y, report = integrate(p, lirk4(), "amfr1", 1)
    np.testing.assert_array_equal(y, step_amf(p, lirk4(), p.initial, 0.0, 0.5, 1))
    assert report.steps == 1 and report.h == 0.5


def test_integrate_is_deterministic():
    build = build_allen_cahn(7)
    y1, r1 = integrate(build.problem, lirk3(), "amf", 20)
    y2, r2 = integrate(build.problem, lirk3(), "amf", 20)
    np.testing.assert_array_equal(y1, y2)
    assert r1.error == r2.error


def test_monotone_refinement():
    build = build_allen_cahn(19)
    p = build.problem
    floor = integrate(p, lirk3(), "exact", 50)[1].error
    errors = [integrate(p, lirk3(), Strategy("amf", k), 50)[1].error for k in range(4)]
    for k in range(3):
        assert errors[k + 1] <= errors[k] + 1e-14 or errors[k + 1] <= 1.01 * floor


def test_divergence_is_reported():
    p = SemiLinearProblem([GeneralSparse.zeros(1)], lambda y, t: 10 * y**3, np.array([1.0]))
    y, report = integrate(p, lirk3(), "exact", 10)
    assert y is None and report.diverged and report.error is None


def test_singular_stage_is_reported_as_divergence():
    # one step of size 1 makes I - h gamma L exactly zero
    g = lirk3().gamma
    p = SemiLinearProblem([GeneralSparse(np.array([[1.0 / g]]))], lambda y, t: 0 * y, np.array([1.0]))
    y, report = integrate(p, lirk3(), "exact", 1)
    assert report.diverged and y is None


def test_integrate_rejects_zero_steps():
    with pytest.raises(ValueError):
        integrate(random_problem(0), lirk3(), "exact", 0)


def test_amf_operation_counts():
    p = build_allen_cahn(5).problem
    stages = lirk3().s - 1
    _, r0 = integrate(p, lirk3(), "amf", 3)
    _, r1 = integrate(p, lirk3(), "amfr1", 3)
    assert r1.counts["amf_solve"] - r0.counts["amf_solve"] == 3 * stages
    assert r1.counts["full_apply"] - r0.counts["full_apply"] == 3 * stages


# ------------------------------------------------------------ relative error


def test_relative_error_examples():
    u = np.random.default_rng(0).standard_normal(7)
    assert relative_error(u, u) == 0.0
    assert relative_error(2 * u, u) == 1.0
    e1 = np.zeros(7)
    e1[0] = np.linalg.norm(u)
    assert relative_error(u + e1, u) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        relative_error(u, np.zeros(7))
    with pytest.raises(ValueError):
        relative_error(u, u[:3])


def test_problem_checks_splitting():
    A = GeneralSparse(np.diag([-1.0, -2.0]))
    with pytest.raises(ValueError):
        SemiLinearProblem([A, A], lambda y, t: y, np.ones(2), full_operator=A)


def test_case_two_amf_stable_where_exact_runs():
    p = build_brusselator(19, case=2).problem
    for n in range(4, 17, 2):
        exact = integrate(p, lirk3(), "exact", n)[1]
        amf = integrate(p, lirk3(), "amf", n)[1]
        assert amf.diverged <= exact.diverged
