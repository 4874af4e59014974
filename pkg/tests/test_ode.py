import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from steerode.autodiff import Mlp, Tape, backward, mlp_forward
from steerode.errors import ConfigError, DivergenceError
from steerode.ode import (B5, C, E, A, SolverConfig, dopri5_solve, interpolate, replay_dopri5,
                          rk4_solve, solve, solve_loss_grad)
from steerode.stiff import StiffProblem

decay = lambda t, z: -z


def test_tableau_consistency():
    # row sums equal the nodes; weights sum to one; error weights sum to zero
    for i in range(1, 7):
        assert sum(A[i]) == pytest.approx(C[i], abs=1e-15)
    assert sum(B5) == pytest.approx(1.0, abs=1e-15)
    assert sum(E) == pytest.approx(0.0, abs=1e-15)


def test_rk4_linear_exact_and_nfe():
    res = rk4_solve(lambda t, z: np.ones_like(z) * 2.0, np.array([1.0]), 0.0, 1.0, 5)
    assert res.final_value[0] == pytest.approx(3.0, abs=1e-14)
    assert res.nfe == 20


@pytest.mark.parametrize("n", [1, 4, 7, 32])
def test_rk4_nfe_is_four_per_step(n):
    assert rk4_solve(decay, np.array([1.0]), 0.0, 1.0, n).nfe == 4 * n


def test_rk4_convergence_order():
    # halving the step shrinks the error by about 2^4
    errs = [abs(rk4_solve(decay, np.array([1.0]), 0.0, 1.0, n).final_value[0] - np.exp(-1))
            for n in (10, 20)]
    assert 12 <= errs[0] / errs[1] <= 20


def test_rk4_zero_steps_rejected():
    with pytest.raises(ConfigError):
        rk4_solve(decay, np.array([1.0]), 0.0, 1.0, 0)


def test_rk4_divergence_reports_step():
    with pytest.raises(DivergenceError) as err, np.errstate(over="ignore"):
        rk4_solve(lambda t, z: z * z * 1e3, np.array([10.0]), 0.0, 1.0, 50)
    assert err.value.step is not None


def test_dopri5_decay_accuracy():
    cfg = SolverConfig(rtol=1e-6, atol=1e-6)
    res = dopri5_solve(decay, np.array([1.0]), 0.0, 1.0, cfg)
    assert abs(res.final_value[0] - np.exp(-1)) <= 1e-5
    assert res.nfe == 6 * (res.accepted + res.rejected) + 1


def test_dopri5_nfe_accounting_with_rejections():
    p = StiffProblem("base", 1000.0)
    res = dopri5_solve(lambda t, y: p.rhs(y, t), np.array([0.0]), 0.0, 0.125,
                       SolverConfig(rtol=1e-5, atol=1e-7, initial_step=0.05))
    assert res.rejected > 0
    assert res.nfe == 6 * (res.accepted + res.rejected) + 1
    assert abs(res.final_value[0] - p.solution(0.125)) < 1e-4


def test_dopri5_zero_field_takes_one_step():
    res = dopri5_solve(lambda t, z: np.zeros_like(z), np.array([2.0]), 0.0, 5.0)
    assert res.accepted == 1 and res.rejected == 0
    assert res.final_value[0] == 2.0


def test_dopri5_zero_span():
    res = dopri5_solve(decay, np.array([1.0]), 0.3, 0.3)
    assert res.nfe == 0 and res.final_value[0] == 1.0


def test_dopri5_backward_in_time():
    res = dopri5_solve(decay, np.array([np.exp(-1.0)]), 1.0, 0.0,
                       SolverConfig(rtol=1e-8, atol=1e-10))
    assert res.final_value[0] == pytest.approx(1.0, abs=1e-7)
    assert all(h < 0 for h in res.steps)


def test_dopri5_step_budget():
    with pytest.raises(DivergenceError):
        dopri5_solve(decay, np.array([1.0]), 0.0, 100.0, SolverConfig(max_steps=3))


def test_accepted_errors_within_tolerance():
    res = dopri5_solve(lambda t, z: np.cos(t) * z, np.array([1.0, -2.0]), 0.0, 6.0)
    assert max(res.errors) <= 1.0
    assert sum(res.steps) == pytest.approx(6.0)


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(method="euler")
    with pytest.raises(ConfigError):
        SolverConfig(rtol=0.0)


def test_dispatch_and_interpolate():
    res = solve(decay, np.array([1.0]), 0.0, 1.0, SolverConfig("rk4", n_steps=50))
    assert res.nfe == 200
    mid = interpolate(res, [0.5])[0, 0]
    assert mid == pytest.approx(np.exp(-0.5), abs=1e-4)


def test_replay_reproduces_adaptive_solve(small_net):
    z0 = np.array([[0.2, -0.4]])
    f = lambda t, z: mlp_forward(small_net, z, t)
    res = dopri5_solve(f, z0, 0.0, 1.0)
    rep = replay_dopri5(f, z0, 0.0, res.steps)
    np.testing.assert_array_equal(rep.final_value, res.final_value)


def test_taped_solve_has_no_rejected_nodes():
    # gradients through a solve with rejections match finite differences of the frozen schedule
    net = Mlp.init([2, 8, 1], np.random.default_rng(5))
    z0 = np.array([[1.0]])
    value, grads = solve_loss_grad(net, z0, 0.0, 2.0, SolverConfig(rtol=1e-6, atol=1e-8),
                                   lambda y: (y * y).sum())
    sched = dopri5_solve(lambda t, z: mlp_forward(net, z, t), z0, 0.0, 2.0,
                         SolverConfig(rtol=1e-6, atol=1e-8)).steps
    p = net.params()
    eps = 1e-6
    for k in range(len(p)):
        idx = (0,) * p[k].ndim
        vals = []
        for s in (1, -1):
            q = [x.copy() for x in p]
            q[k][idx] += s * eps
            n2 = net.with_params(q)
            y = replay_dopri5(lambda t, z: mlp_forward(n2, z, t), z0, 0.0, sched).final_value
            vals.append(float((y * y).sum()))
        fd = (vals[0] - vals[1]) / (2 * eps)
        assert grads[k][idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_loss_independent_of_params_gives_zero_grads():
    net = Mlp.init([2, 4, 1], np.random.default_rng(0))
    value, grads = solve_loss_grad(net, np.array([[1.0]]), 0.0, 0.0, None, lambda y: 3.0)
    assert value == 3.0 and all(np.all(g == 0) for g in grads)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 2.0))
def test_dopri5_linear_growth_matches_exponential(lam, T):
    res = dopri5_solve(lambda t, z: lam * z, np.array([1.0]), 0.0, T,
                       SolverConfig(rtol=1e-8, atol=1e-10))
    assert res.final_value[0] == pytest.approx(np.exp(lam * T), rel=1e-6)
    assert res.nfe == 6 * (res.accepted + res.rejected) + 1
