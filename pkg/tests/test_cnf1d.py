import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from steerode.autodiff import Mlp
from steerode.cnf1d import (CnfConfig, CnfState, MogSpec, cnf_rhs, density_mass,
                            export_trajectories, forward_trajectories, log_likelihood,
                            path_displacement, std_normal_logpdf, train_cnf)
from steerode.errors import ContractError
from steerode.ode import SolverConfig
from steerode.sampling import RngStream

TIGHT = SolverConfig(rtol=1e-10, atol=1e-12)


def linear_net(a, c=0.0):
    """``f(z, t) = a z + c t`` as a single affine layer."""
    return Mlp([np.array([[a], [c]])], [np.zeros(1)])


@pytest.fixture(scope="module")
def short_run():
    return train_cnf(MogSpec(), CnfConfig(iters=30, eval_every=10, seed=1))


def test_rhs_linear_net():
    out = cnf_rhs(linear_net(3.0))(0.2, np.array([[0.5, 0.0], [-1.0, 4.0]]))
    np.testing.assert_allclose(out, [[1.5, -3.0], [-3.0, -3.0]])


def test_rhs_z_independent_has_zero_trace():
    out = cnf_rhs(linear_net(0.0, 2.0))(0.25, np.array([[0.7, 0.0]]))
    np.testing.assert_allclose(out, [[0.5, 0.0]])


def test_rhs_trace_matches_fd(scalar_net):
    rhs = cnf_rhs(scalar_net)
    z, t, h = 0.5, 0.3, 1e-6
    tr = -rhs(t, np.array([[z, 0.0]]))[0, 1]
    f = lambda v: rhs(t, np.array([[v, 0.0]]))[0, 0]
    assert tr == pytest.approx((f(z + h) - f(z - h)) / (2 * h), rel=1e-6)


def test_rhs_rejects_wide_net(small_net):
    with pytest.raises(ContractError):
        cnf_rhs(small_net)


def test_state_roundtrip():
    s = CnfState(0.3)
    assert s.delta_logp == 0.0
    assert CnfState.from_array(s.as_array()) == s


def test_zero_net_is_identity_flow():
    x = np.linspace(-4, 4, 33)
    lp = log_likelihood(Mlp.zeros([2, 4, 1]), x, 0.0, 1.0)
    assert np.max(np.abs(lp - std_normal_logpdf(x))) <= 1e-12


@pytest.mark.parametrize("a", [-1.3, 0.4, 2.0])
def test_linear_flow_change_of_variables(a):
    x = np.linspace(-3, 3, 13)
    T = 0.8
    z0 = x * np.exp(-a * T)
    expected = std_normal_logpdf(z0) - a * T
    lp = log_likelihood(linear_net(a), x, 0.0, T, TIGHT)
    assert np.max(np.abs(lp - expected)) <= 1e-6


def test_scalar_input_gives_float():
    assert isinstance(log_likelihood(linear_net(1.0), 0.3, 0.0, 1.0), float)


def test_mog_spec_validation_and_density():
    with pytest.raises(ContractError):
        MogSpec(weights=(0.5, 0.6))
    with pytest.raises(ContractError):
        MogSpec(stds=(0.5, -1.0))
    m = MogSpec()
    x = np.linspace(-8, 8, 4001)
    assert np.trapezoid(np.exp(m.logpdf(x)), x) == pytest.approx(1.0, abs=1e-8)
    s = m.sample(20_000, RngStream(0))
    assert abs(s.mean()) < 0.05 and s.std() == pytest.approx(np.sqrt(4.25), rel=0.02)


def test_training_history_deterministic(short_run):
    again = train_cnf(MogSpec(), CnfConfig(iters=30, eval_every=10, seed=1))
    assert again.history == short_run.history
    assert short_run.history["iter"] == [10, 20, 30]
    assert np.all(np.diff(short_run.history["cumulative_nfe"]) > 0)


def test_trained_likelihood_matches_change_of_variables(short_run):
    net = short_run.model
    z = np.linspace(-2.5, 2.5, 201)
    h = 1e-5
    end = forward_trajectories(net, np.concatenate([z - h, z, z + h]), [0.0, 1.0], TIGHT)[-1]
    xm, x, xp = np.split(end, 3)
    jac = (xp - xm) / (2 * h)
    oracle = std_normal_logpdf(z) - np.log(np.abs(jac))
    lp = log_likelihood(net, x, 0.0, 1.0, TIGHT)
    assert abs(np.mean(lp) - np.mean(oracle)) <= 0.1
    assert np.max(np.abs(lp - oracle)) <= 1e-4


def test_trained_density_normalised(short_run):
    assert density_mass(short_run.model, 1.0) == pytest.approx(1.0, abs=0.01)


def test_constrained_shift_eval_time():
    cfg = CnfConfig(b=0.375)
    assert cfg.sampler().eval_end_time() == 0.625
    assert CnfConfig().sampler().kind == "fixed"


def test_export_zero_net_constant():
    rows = export_trajectories(Mlp.zeros([2, 3, 1]), [0.5, -1.0], [0.0, 0.5, 1.0])
    assert len(rows) == 6
    assert all(z == (0.5 if i == 0 else -1.0) for i, _, z in rows)


def test_export_single_checkpoint_is_identity(scalar_net):
    rows = export_trajectories(scalar_net, [0.1, 0.2], [0.0])
    assert [r[2] for r in rows] == [0.1, 0.2]


def test_path_displacement_zero_net():
    assert path_displacement(Mlp.zeros([2, 3, 1]), np.ones(4), 1.0, 0.375) == 0.0


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(0.1, 1.5))
def test_linear_flow_property(a, T):
    x = np.array([-1.0, 0.0, 2.0])
    lp = log_likelihood(linear_net(a), x, 0.0, T, TIGHT)
    np.testing.assert_allclose(lp, std_normal_logpdf(x * np.exp(-a * T)) - a * T, atol=1e-6)
