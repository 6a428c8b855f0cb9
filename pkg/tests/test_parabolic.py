import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from homog.coeffs import make_constant, make_gloria_lebris, make_laminate_1d
from homog.filters import FilterSpec
from homog.linsolve import estimate_spectral_radius
from homog.mesh import build_dirichlet_system, build_periodic_cell_system
from homog.parabolic import (
    HeatOperator,
    SimpsonAccumulator,
    TimeOptions,
    TimeStepError,
    default_n_steps,
    evolve_and_integrate,
    fixed_time_grid,
    initial_condition,
    rkc_step,
    safe_stages,
    select_stages,
    simpson_nonuniform,
    stability_boundary,
    stability_polynomial,
)

SINE = lambda x: 2 + np.sin(2 * np.pi * x)  # noqa: E731


# ---- stage selection and the scalar test equation -------------------------

def test_select_stages_examples():
    assert select_stages(1.0, 100.0) == 13
    assert select_stages(2.6, 1.0) == 2
    assert select_stages(1e-3, 1.0) == 2


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e5), st.floats(1e-3, 1e5))
def test_select_stages_monotone(x, y):
    lo, hi = sorted((x, y))
    assert select_stages(lo, 1.0) <= select_stages(hi, 1.0)


@pytest.mark.parametrize("s", range(2, 40))
def test_safe_stages_cover_exact_boundary(s):
    z = 0.653 * s * s
    k = safe_stages(z, 1.0, 0.05)
    assert stability_boundary(k) >= z
    grid = -np.linspace(0, stability_boundary(k), 400)
    assert np.all(np.abs(stability_polynomial(grid, k)) <= 1.0 + 1e-12)


@pytest.mark.parametrize("s", [2, 3, 5, 8, 13])
def test_scalar_mode(s):
    y = rkc_step(lambda u: -u, np.array([1.0]), 0.1, s)[0]
    assert abs(y - math.exp(-0.1)) <= 1e-3
    assert y == pytest.approx(stability_polynomial(-0.1, s), rel=1e-13)


def test_zero_state_stays_zero():
    A = sp.identity(4, format="csr")
    op = HeatOperator(A, np.ones(4))
    assert np.all(rkc_step(op, np.zeros(4), 0.5, 3) == 0)


def test_divergence_detected():
    with pytest.raises(TimeStepError, match="time step diverged"):
        with np.errstate(over="ignore"):
            rkc_step(lambda u: -1e300 * u, np.array([1e10]), 1e10, 2)


def _heat_1d(n=32):
    h = 1.0 / n
    main = np.full(n - 1, 2.0 / h)
    off = np.full(n - 2, -1.0 / h)
    A = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    M = np.full(n - 1, h)
    x = np.arange(1, n) * h
    return HeatOperator(A, M), x, estimate_spectral_radius(A, M)


def _integrate(op, u, T, dt, rho):
    steps = int(round(T / dt))
    for _ in range(steps):
        u = rkc_step(op, u, dt, safe_stages(dt, rho, 0.05))
    return u


def rkc_order_1d():
    """Richardson order of RKC2 on the 1D heat equation (dt = 1e-2, 5e-3, 2.5e-3)."""
    op, x, rho = _heat_1d()
    u0 = np.sin(np.pi * x) + 0.5 * np.sin(3 * np.pi * x)
    dts = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
    sols = [_integrate(op, u0, 0.1, dt, rho) for dt in dts]
    diffs = [np.max(np.abs(sols[k] - sols[k + 1])) for k in range(3)]
    return min(math.log2(diffs[k] / diffs[k + 1]) for k in range(2))


def test_rkc_order():
    assert rkc_order_1d() >= 1.9


# ---- quadrature --------------------------------------------------------------

def test_simpson_examples():
    assert simpson_nonuniform([(0, 0), (0.5, 0.25), (1, 1)]) == pytest.approx(1 / 3, abs=1e-15)
    assert simpson_nonuniform([(0, 0), (0.3, 0.09), (1, 1)]) == pytest.approx(1 / 3, abs=1e-14)
    assert simpson_nonuniform([(0.2, 3), (0.5, 3), (0.6, 3), (1.7, 3)]) == pytest.approx(4.5)


def test_simpson_rejects_bad_input():
    with pytest.raises(ValueError):
        simpson_nonuniform([(0, 1), (0, 2)])
    with pytest.raises(ValueError):
        simpson_nonuniform([(0, 1)])
    with pytest.raises(ValueError):
        SimpsonAccumulator().value


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=20).filter(lambda v: len(v) % 2 == 0),
       st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_simpson_exact_for_quadratics(gaps, a, b, c):
    t = np.concatenate([[0.0], np.cumsum(gaps)])
    v = a + b * t + c * t * t
    exact = a * t[-1] + b * t[-1] ** 2 / 2 + c * t[-1] ** 3 / 3
    got = simpson_nonuniform(zip(t, v))
    assert got == pytest.approx(exact, abs=1e-12 * (1 + abs(exact)))


def test_accumulator_matrix_values():
    acc = SimpsonAccumulator()
    for t in (0.0, 0.4, 1.0):
        acc.add(t, np.array([[t, t * t], [t * t, 1.0]]))
    assert np.allclose(acc.value, [[0.5, 1 / 3], [1 / 3, 1.0]])


# ---- time grids ----------------------------------------------------------------

def test_default_steps_and_grid():
    assert default_n_steps(0.1, 100.0) == 64
    assert default_n_steps(100.0, 1e8) == 4096
    assert default_n_steps(1.0, 1e4) % 2 == 0
    g = fixed_time_grid(2.0, 64, 1e4)
    assert g[0] == 0 and g[-1] == 2.0 and np.all(np.diff(g) > 0)
    assert np.diff(g)[0] < np.diff(g)[-1]
    with pytest.raises(ValueError):
        TimeOptions(mode="fixed", n_steps=7)
    with pytest.raises(ValueError):
        TimeOptions(mode="implicit")


# ---- cell-problem evolutions ---------------------------------------------------

def test_initial_condition_1d():
    f = make_laminate_1d(SINE, dim=1)
    sys_ = build_dirichlet_system(f, 2, 64)
    u0 = initial_condition(sys_, 0)
    x = sys_.mesh.nodes[:, 0]
    inner = ~sys_.mesh.boundary_mask
    # discrete weak divergence of a, i.e. a'(x)
    assert np.max(np.abs(u0[inner] - 2 * np.pi * np.cos(2 * np.pi * x[inner]))) <= 0.02
    assert np.all(u0[~inner] == 0)


def test_initial_condition_shift_invariant():
    f = make_gloria_lebris()
    a = build_dirichlet_system(f, 2, 8)
    b = build_dirichlet_system(f.shifted(3.0), 2, 8)
    for i in range(2):
        assert np.allclose(initial_condition(a, i), initial_condition(b, i), atol=1e-10)
    c = build_dirichlet_system(make_constant(2.0), 2, 8)
    assert np.max(np.abs(initial_condition(c, 0))) <= 1e-12


def test_constant_field_gives_zero():
    sys_ = build_dirichlet_system(make_constant(2.0), 3, 8, FilterSpec(3, 2.0))
    evo = evolve_and_integrate(sys_, 0.5)
    assert np.all(evo.J == 0) and np.all(evo.decay == 0)


@pytest.fixture(scope="module")
def gloria_run():
    f = make_gloria_lebris()
    sys_ = build_dirichlet_system(f, 3, 16, FilterSpec(3, 2.0))
    return sys_, evolve_and_integrate(sys_, 0.3, TimeOptions(mode="fixed", n_steps=256))


def test_evolution_invariants(gloria_run):
    sys_, evo = gloria_run
    assert np.all(np.diff(evo.times) > 0)
    assert evo.times[0] == 0 and evo.times[-1] == pytest.approx(0.3, abs=1e-15)
    assert np.allclose(evo.J, evo.J.T, rtol=1e-12, atol=0)
    assert np.all(np.diag(evo.J) >= 0)
    assert np.all(evo.q[:, [0, 1], [0, 1]] >= 0)
    assert len(evo.stage_counts) == evo.n_steps
    # energy is non-increasing on every step
    d = evo.decay
    assert np.all(d[1:] <= d[:-1] * (1 + 1e-10))


def test_dirichlet_preserved_at_every_sample():
    f = make_gloria_lebris()
    sys_ = build_dirichlet_system(f, 3, 8)
    weight = sys_.mesh.boundary_mask.astype(float)
    evo = evolve_and_integrate(sys_, 0.2, TimeOptions(mode="fixed", n_steps=64), weight=weight)
    assert np.all(evo.q == 0)


def test_adaptive_mode_agrees_with_fixed(gloria_run):
    sys_, fixed = gloria_run
    evo = evolve_and_integrate(sys_, 0.3, TimeOptions(mode="adaptive", tol_t=1e-6))
    assert evo.tol_t == 1e-6
    assert np.max(np.abs(evo.J - fixed.J)) <= 1e-3 * np.abs(fixed.J).max()
    d = evo.decay
    assert np.all(d[1:] <= d[:-1] * (1 + 1e-10))


def test_periodic_exponential_decay():
    f = make_gloria_lebris()
    sys_ = build_periodic_cell_system(32, f)
    evo = evolve_and_integrate(sys_, 2.0, TimeOptions(mode="fixed", n_steps=256),
                               weight=sys_.M_lump)
    lam = f.alpha * math.pi**2 / 2
    bound = 1.02 * np.exp(-lam * evo.times)[:, None] * evo.decay[0][None, :]
    assert np.all(evo.decay <= bound)


def j_refinement_orders():
    """Observed orders of J under halving of the fixed step (1D laminate cell problem)."""
    f = make_laminate_1d(SINE, dim=1)
    sys_ = build_dirichlet_system(f, 4, 32, FilterSpec(3, 8 / 3, 1))
    Js = [evolve_and_integrate(sys_, 0.5, TimeOptions(mode="fixed", n_steps=n)).J
          for n in (2048, 4096, 8192, 16384)]
    diffs = [np.max(np.abs(Js[k] - Js[k + 1])) for k in range(3)]
    return [math.log2(diffs[k] / diffs[k + 1]) for k in range(2)]


def test_j_order_under_refinement():
    assert min(j_refinement_orders()) >= 1.9


@pytest.mark.slow
def test_halving_step_changes_j_little():
    f = make_gloria_lebris()
    sys_ = build_dirichlet_system(f, 4, 32, FilterSpec(3, 8 / 3))
    from homog.upscale import AdmissibilityWarning, select_parameters

    with pytest.warns(AdmissibilityWarning):
        T = select_parameters(4, 2 / 3, f.alpha, f.beta, math.sqrt(2)).T
    J1 = evolve_and_integrate(sys_, T, TimeOptions(mode="fixed", n_steps=4096)).J
    J2 = evolve_and_integrate(sys_, T, TimeOptions(mode="fixed", n_steps=8192)).J
    assert np.max(np.abs(J1 - J2)) <= 1e-6 * np.abs(J2).max()
