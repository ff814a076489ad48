import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randsplit import activation as act
from randsplit import pdsplit
from randsplit.activation import SeededRng
from randsplit.operators import AveragedMap, HalfSpace, LinearMap, matrix_map, project_halfspace, zero_map
from randsplit.pdsplit import (
    FejerMetric,
    IterationState,
    ProblemSpec,
    Status,
    StepSizeError,
    StepSizes,
    default_steps,
    fejer_distance,
    initial_state,
    iterate_once,
    relative_change,
    solve,
    validate_steps,
)

import oracles


def _norm_map(norm, n=2):
    # a LinearMap whose declared bound is exactly `norm`
    return matrix_map(norm * np.eye(n), norm_bound=norm)


def _spec(mu=1.0, norm=2.0, delta=math.inf):
    return ProblemSpec(L=_norm_map(norm), mu=mu, delta=delta)


def _clamp_problem():
    # A = normal cone of [0, 1], C(x) = x - 2 (mu = 1), L = 0
    return ProblemSpec(
        L=zero_map(1, 1),
        resolvent_A=lambda tau, x: np.clip(x, 0.0, 1.0),
        resolvent_Binv=lambda g, u: np.zeros_like(u),
        C=lambda x: x - 2.0,
        mu=1.0,
    )


# -- step sizes ---------------------------------------------------------------

def test_validate_steps_examples():
    spec = _spec(mu=1.0, norm=2.0)
    assert validate_steps(spec, StepSizes(1.0, 0.99 / 8)) > 0
    with pytest.raises(StepSizeError) as exc:
        validate_steps(spec, StepSizes(1.0, 0.2))
    assert exc.value.slack < 0
    with pytest.raises(StepSizeError):
        validate_steps(spec, StepSizes(2.0, 1e-9))


def test_validate_steps_rejects_nonpositive():
    with pytest.raises(ValueError):
        validate_steps(_spec(), StepSizes(0.0, 0.1))
    with pytest.raises(ValueError):
        validate_steps(_spec(), StepSizes(0.1, -1.0))


def test_validate_steps_gamma_bound_with_finite_delta():
    spec = _spec(mu=1.0, norm=0.1, delta=0.5)
    with pytest.raises(StepSizeError):
        validate_steps(spec, StepSizes(0.5, 1.0))  # gamma must stay below 2 delta


def test_default_steps_examples():
    s = default_steps(_spec(mu=1.0, norm=1.0), safety=0.99)
    assert (s.tau, s.gamma) == (1.0, pytest.approx(0.495, rel=1e-15))
    s = default_steps(_spec(mu=0.5, norm=2.0), safety=0.5)
    assert (s.tau, s.gamma) == (0.5, pytest.approx(0.125, rel=1e-15))


def test_default_steps_safety_clamp_keeps_strictness():
    spec = _spec(mu=1.0, norm=1.0)
    s = default_steps(spec, safety=1 - 1e-12)
    assert validate_steps(spec, s) > 0
    with pytest.raises(ValueError):
        default_steps(spec, safety=1.0)


def test_default_steps_with_explicit_tau():
    s = default_steps(_spec(mu=1.0, norm=2.0), safety=0.9, tau=0.5)
    assert s.tau == 0.5 and s.gamma == pytest.approx(0.9 * 1.5 / 4)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0.0, 1e2), st.floats(1e-2, 1e3) | st.just(math.inf),
       st.floats(0.01, 0.999))
def test_default_steps_always_admissible(mu, norm, delta, safety):
    spec = _spec(mu=mu, norm=norm, delta=delta)
    s = default_steps(spec, safety)
    assert validate_steps(spec, s) > 0


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-2, 10), st.floats(0.1, 10), st.floats(1e-3, 1.99), st.floats(1e-4, 10))
def test_validate_steps_agrees_with_inequality(mu, norm, tau_frac, gamma):
    spec = _spec(mu=mu, norm=norm)
    tau = tau_frac * mu
    rhs = (1 / gamma) * (1 / tau - 1 / (2 * mu))
    try:
        validate_steps(spec, StepSizes(tau, gamma))
        ok = True
    except StepSizeError:
        ok = False
    if abs(rhs - norm ** 2) > 1e-9 * norm ** 2:
        assert ok == (norm ** 2 < rhs)


def test_problem_spec_rejects_bad_constants():
    with pytest.raises(ValueError):
        ProblemSpec(L=zero_map(1, 1), mu=0.0)
    with pytest.raises(ValueError):
        ProblemSpec(L=zero_map(1, 1), delta=-1.0)


# -- single iterations --------------------------------------------------------

def test_all_zero_operators_fixed_point():
    spec = ProblemSpec(L=zero_map(2, 3))
    st0 = initial_state(np.array([1.0, 2.0, 3.0]), u0=np.array([4.0, 5.0]))
    st1 = iterate_once(spec, StepSizes(1.0, 1.0), st0, 0)
    np.testing.assert_array_equal(st1.p, st0.x)
    np.testing.assert_array_equal(st1.x, st0.x)
    np.testing.assert_array_equal(st1.x_bar, st0.x)
    # J_{gamma B^-1} = 0 is the default dual resolvent (B^-1 = normal cone of {0})
    np.testing.assert_array_equal(st1.u, np.zeros(2))
    assert st1.k == 1


def test_all_zero_operators_keep_dual_with_identity_resolvent():
    spec = ProblemSpec(L=zero_map(2, 3), resolvent_Binv=lambda g, u: u)
    st0 = initial_state(np.zeros(3), u0=np.array([4.0, 5.0]))
    st1 = iterate_once(spec, StepSizes(1.0, 1.0), st0, 0)
    np.testing.assert_array_equal(st1.u, st0.u)


def test_clamp_problem_first_step():
    st1 = iterate_once(_clamp_problem(), StepSizes(1.0, 1.0), initial_state(np.zeros(1), dual_dim=1), 0)
    assert st1.p[0] == 1.0 and st1.x[0] == 1.0


def test_activation_of_feasible_point_is_identity():
    h = HalfSpace(np.array([1.0, 1.0]), 10.0)
    spec = ProblemSpec(L=zero_map(1, 2), activated_maps=[AveragedMap(lambda z: project_halfspace(h, z))])
    st0 = initial_state(np.array([1.0, 2.0]), dual_dim=1)
    st1 = iterate_once(spec, StepSizes(1.0, 1.0), st0, 1)
    np.testing.assert_array_equal(st1.x, st1.p)


def test_call_order_uses_xbar_then_new_dual():
    calls = []
    K = np.array([[1.0, 2.0]])

    def fwd(x):
        calls.append(("L", x.copy()))
        return K @ x

    def adj(u):
        calls.append(("L*", u.copy()))
        return K.T @ u

    def resB(g, w):
        calls.append(("JB", w.copy()))
        return w + 100.0  # recognisable output

    def resA(t, z):
        calls.append(("JA", z.copy()))
        return z

    def C(x):
        calls.append(("C", x.copy()))
        return np.zeros_like(x)

    spec = ProblemSpec(L=LinearMap(fwd, adj, 3.0), resolvent_A=resA, resolvent_Binv=resB, C=C)
    st0 = IterationState(x=np.array([1.0, 1.0]), x_bar=np.array([5.0, 7.0]), u=np.array([0.5]),
                         p=np.array([1.0, 1.0]), k=0)
    st1 = iterate_once(spec, StepSizes(0.1, 0.1), st0, 0)
    names = [c[0] for c in calls]
    assert names.index("L") < names.index("JB") < names.index("L*") < names.index("JA")
    np.testing.assert_array_equal(calls[names.index("L")][1], st0.x_bar)
    np.testing.assert_array_equal(calls[names.index("L*")][1], st1.u)
    np.testing.assert_array_equal(calls[names.index("C")][1], st0.x)
    np.testing.assert_array_equal(st1.x_bar, st1.x + st1.p - st0.x)


# -- solve ----------------------------------------------------------------------

def test_stationary_start_converges_in_one_iteration():
    spec = _clamp_problem()
    rep = solve(spec, StepSizes(1.0, 1.0), act.fixed(0, 0), initial_state(np.ones(1), dual_dim=1))
    assert rep.status is Status.CONVERGED and rep.iterations == 1 and rep.final_error == 0.0


def test_clamp_problem_solution():
    rep = solve(_clamp_problem(), StepSizes(1.0, 1.0), act.fixed(0, 0), np.array([0.3]))
    assert rep.converged and abs(rep.terminal.x[0] - 1.0) <= 1e-8


def _box_qp(seed):
    """min x.Px/2 + q.x over [lo, hi]^5 with a coupling constraint K x <= b handled by the dual."""
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(5, 5))
    P = B @ B.T + np.eye(5)
    q = rng.normal(scale=3, size=5)
    K = rng.normal(size=(2, 5))
    b = rng.uniform(0.0, 1.0, size=2)
    return P, q, K, b


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_box_qp_matches_active_set_oracle(seed):
    P, q, K, b = _box_qp(seed)
    lo, hi = -1.0, 1.0
    spec = ProblemSpec(
        L=matrix_map(K),
        resolvent_A=lambda tau, x: np.clip(x, lo, hi),
        # B^-1 = normal cone of {y <= b}; Moreau step in closed form
        resolvent_Binv=lambda g, w: w - g * np.minimum(w / g, b),
        C=lambda x: P @ x + q,
        mu=1.0 / np.linalg.eigvalsh(P).max(),
    )
    steps = default_steps(spec, 0.99, tau=spec.mu)
    rep = solve(spec, steps, act.fixed(0, 0), np.zeros(5), tolerance=1e-13, max_iters=200_000)
    assert rep.converged
    G = np.vstack([K, np.eye(5), -np.eye(5)])
    g = np.concatenate([b, np.full(5, hi), np.full(5, -lo)])
    ref = oracles.qp_solve(P, q, G, g)
    np.testing.assert_allclose(rep.terminal.x, ref, atol=1e-6)


def test_solve_reports_max_iterations():
    rep = solve(_clamp_problem(), StepSizes(1e-3, 1.0), act.fixed(0, 0), np.array([0.0]),
                tolerance=1e-14, max_iters=5)
    assert rep.status is Status.MAX_ITERATIONS and rep.iterations == 5 and len(rep.error_trace) == 5


def test_solve_detects_divergence():
    spec = ProblemSpec(L=zero_map(1, 1), C=lambda x: 1e3 * x, mu=1e-3)
    rep = solve(spec, StepSizes(1.0, 1.0), act.fixed(0, 0), np.array([1.0]),
                check_steps=False, max_iters=1000)
    assert rep.status is Status.DIVERGED and math.isnan(rep.final_error)


def test_solve_rejects_invalid_schedule_and_steps():
    spec = _clamp_problem()
    with pytest.raises(ValueError):
        solve(spec, StepSizes(1.0, 1.0), act.bernoulli_alternating(2, q=0.0), np.zeros(1))
    with pytest.raises(StepSizeError):
        solve(spec, StepSizes(3.0, 1.0), act.fixed(0, 0), np.zeros(1))


def test_fixed_schedule_accepted_with_case_flag():
    h = HalfSpace(np.array([1.0]), 5.0)
    maps = [AveragedMap(lambda z: project_halfspace(h, z))] * 2
    spec = ProblemSpec(L=zero_map(1, 1), resolvent_A=lambda t, x: np.clip(x, 0, 1), C=lambda x: x - 2.0,
                       activated_maps=maps)
    rep = solve(spec, StepSizes(1.0, 1.0), act.fixed(2, 1), np.zeros(1))
    assert rep.converged


def test_relative_change_edge_cases():
    z = IterationState(np.zeros(2), np.zeros(2), np.zeros(1), np.zeros(2))
    nz = IterationState(np.ones(2), np.ones(2), np.zeros(1), np.ones(2))
    assert relative_change(z, z) == 0.0
    assert relative_change(z, nz) == math.inf
    a = IterationState(np.array([3.0, 0.0]), np.zeros(2), np.array([4.0]), np.zeros(2))
    b = IterationState(np.array([3.0, 1.0]), np.zeros(2), np.array([4.0]), np.zeros(2))
    assert relative_change(a, b) == pytest.approx(1 / 5)


def test_error_trace_decimation(monkeypatch):
    monkeypatch.setattr(pdsplit, "_TRACE_FULL", 10)
    rep = solve(_clamp_problem(), StepSizes(1e-3, 1.0), act.fixed(0, 0), np.array([0.0]),
                tolerance=1e-16, max_iters=50)
    assert len(rep.error_trace) == 10 + 4
    rep = solve(_clamp_problem(), StepSizes(1e-3, 1.0), act.fixed(0, 0), np.array([0.0]),
                tolerance=1e-16, max_iters=50, full_trace=True)
    assert len(rep.error_trace) == 50


def test_seed_determinism_of_random_schedule():
    h = [HalfSpace(np.array([1.0, 0.0]), 0.5), HalfSpace(np.array([0.0, 1.0]), 0.5)]
    maps = [AveragedMap(lambda z, hh=hh: project_halfspace(hh, z)) for hh in h]
    spec = ProblemSpec(L=zero_map(1, 2), resolvent_A=lambda t, x: np.clip(x, -1, 1),
                       C=lambda x: x - 1.0, activated_maps=maps)
    runs = [solve(spec, StepSizes(0.5, 1.0), act.randomized_uniform(2, seed=3), np.zeros(2),
                  rng=SeededRng(3), max_iters=2000) for _ in range(2)]
    assert runs[0].iterations == runs[1].iterations
    np.testing.assert_array_equal(runs[0].terminal.x, runs[1].terminal.x)


def test_callback_sees_every_state():
    seen = []
    solve(_clamp_problem(), StepSizes(1.0, 1.0), act.fixed(0, 0), np.array([0.3]), callback=lambda s: seen.append(s.k))
    assert seen == list(range(1, len(seen) + 1))


# -- Fejer diagnostic -----------------------------------------------------------

def test_fejer_zero_at_reference():
    L = matrix_map(np.array([[1.0, 1.0]]))
    m = FejerMetric(0.5, 0.2, 1.0, L)
    x, u = np.array([0.5, 0.5]), np.array([0.5])
    st0 = IterationState(x, x.copy(), u, x.copy())
    assert fejer_distance(m, st0, (x, u)) == 0.0


def test_fejer_decoupled_when_L_is_zero():
    m = FejerMetric(0.5, 0.25, 1.0, zero_map(1, 2))
    st0 = IterationState(np.array([1.0, 2.0]), np.array([3.0, 5.0]), np.array([1.0]), np.zeros(2))
    dx, du, dz = np.array([1.0, 2.0]), np.array([1.0]), np.array([2.0, 3.0])
    expected = math.sqrt(dx @ dx / 0.5 + du @ du / 0.25 + (2 - 0.5) * dz @ dz)
    assert fejer_distance(m, st0, (np.zeros(2), np.zeros(1))) == pytest.approx(expected)


def test_fejer_rejects_indefinite_metric():
    m = FejerMetric(1.0, 10.0, 1.0, matrix_map(np.eye(2)))
    assert not m.is_positive_definite()
    with pytest.raises(StepSizeError):
        fejer_distance(m, initial_state(np.zeros(2), dual_dim=2), (np.zeros(2), np.zeros(2)))


def test_fejer_positive_definite_on_random_probes():
    rng = np.random.default_rng(0)
    K = rng.normal(size=(3, 4))
    L = matrix_map(K)
    spec = ProblemSpec(L=L, mu=0.7)
    s = default_steps(spec, 0.95)
    m = FejerMetric(s.tau, s.gamma, spec.mu, L)
    assert m.is_positive_definite()
    for _ in range(200):
        assert m.squared(rng.normal(size=4), rng.normal(size=3), rng.normal(size=4)) > 0


def test_fejer_nonincreasing_on_desk_qp():
    # min |x - (1, 1)|^2 / 2 s.t. x1 + x2 <= 1: x* = (1/2, 1/2), u* = 1/2
    K = np.array([[1.0, 1.0]])
    spec = ProblemSpec(
        L=matrix_map(K),
        resolvent_Binv=lambda g, w: w - g * np.minimum(w / g, 1.0),
        C=lambda x: x - 1.0,
        mu=1.0,
    )
    s = default_steps(spec, 0.9)
    m = FejerMetric(s.tau, s.gamma, spec.mu, spec.L)
    ref = (np.array([0.5, 0.5]), np.array([0.5]))
    st_ = initial_state(np.array([3.0, -2.0]), dual_dim=1)
    prev = fejer_distance(m, st_, ref)
    for _ in range(1000):
        st_ = iterate_once(spec, s, st_, 0)
        d = fejer_distance(m, st_, ref)
        assert d <= prev + 1e-10
        prev = d
    assert prev < 1e-6
