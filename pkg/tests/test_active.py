"""Active-learning loop tests.

The synthetic oracle is analytic, so its own invariants (critical points,
gradient exactness, symmetry) are checked against finite differences and
closed forms before any workflow behavior is asserted.
"""

import numpy as np
import pytest

from fieldlearn import active, nets
from fieldlearn.errors import ConfigurationError, DataError


@pytest.fixture(scope="module")
def oracle():
    return active.synthetic_oracle()


def _fd_jacobian(fn, x, step=1e-6):
    d = x.size
    out = np.zeros((d, d))
    for j in range(d):
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        out[:, j] = (fn(xp) - fn(xm)) / (2 * step)
    return out


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def test_wells_are_critical_points(oracle):
    mu = oracle.chemical_potential(oracle.well_centers)
    assert np.max(np.abs(mu)) < 1e-12


def test_gradient_matches_fd_of_free_energy(oracle):
    rng = np.random.default_rng(0)
    bounds = oracle.bounds
    for _ in range(20):
        x = bounds[:, 0] + rng.random(4) * (bounds[:, 1] - bounds[:, 0])
        x = 0.02 + 0.96 * (x - bounds[:, 0]) + bounds[:, 0]  # keep FD inside
        fd = np.array([(oracle.free_energy(x + step * e) -
                        oracle.free_energy(x - step * e)) / (2 * step)
                       for step, e in [(1e-6, np.eye(4)[j]) for j in range(4)]])
        np.testing.assert_allclose(oracle.chemical_potential(x), fd,
                                   rtol=1e-6, atol=1e-6)


def test_cross_derivatives_symmetric(oracle):
    rng = np.random.default_rng(1)
    bounds = oracle.bounds
    margin = 0.02 * (bounds[:, 1] - bounds[:, 0])
    for _ in range(50):
        x = bounds[:, 0] + margin + rng.random(4) * (
            bounds[:, 1] - bounds[:, 0] - 2 * margin)
        jac = _fd_jacobian(oracle.chemical_potential, x)
        assert np.max(np.abs(jac - jac.T)) < 1e-8 * max(1.0, np.max(np.abs(jac)))


def test_potential_odd_in_order_parameters(oracle):
    rng = np.random.default_rng(2)
    x = np.column_stack([rng.uniform(-0.1, 0.35, 30),
                         rng.uniform(-0.5, 0.5, (30, 3))])
    mu = oracle.chemical_potential(x)
    for k in (1, 2, 3):
        flipped = x.copy()
        flipped[:, k] = -flipped[:, k]
        mu_flip = oracle.chemical_potential(flipped)
        np.testing.assert_array_equal(mu_flip[:, k], -mu[:, k])
        np.testing.assert_array_equal(
            oracle.free_energy(flipped), oracle.free_energy(x))


def test_true_hessian_positive_definite_at_wells(oracle):
    for center in oracle.well_centers:
        jac = _fd_jacobian(oracle.chemical_potential, center, step=1e-5)
        eig = np.linalg.eigvalsh((jac + jac.T) / 2)
        assert np.min(eig) > 0.1


def test_barrier_point_is_not_convex(oracle):
    saddle = np.array([0.125, 0.0, 0.0, 0.0])
    jac = _fd_jacobian(oracle.chemical_potential, saddle, step=1e-5)
    assert np.min(np.linalg.eigvalsh((jac + jac.T) / 2)) < -0.1


def test_out_of_domain_rejected(oracle):
    with pytest.raises(DataError, match="domain"):
        oracle.chemical_potential(np.array([0.6, 0.0, 0.0, 0.0]))
    with pytest.raises(DataError, match="domain"):
        oracle.free_energy(np.array([[0.1, 0.0, 0.9, 0.0]]))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _mini_config(**overrides):
    base = dict(rounds=2, global_batch=16, local_batch=8, screening_batch=64,
                hidden=(8, 8), search_grid=((6, 6), (10, 10)),
                search_epochs=20, train_epochs=60, polish_epochs=20, seed=0)
    base.update(overrides)
    return active.WorkflowConfig(**base)


def test_global_sampling_grows_dataset_exactly(oracle):
    state = active.new_state(_mini_config(), oracle)
    active.global_sampling(state, 0)
    assert state.n_samples == 16
    assert all(stream == "global" for _, stream in state.provenance)
    active.global_sampling(state, 2)
    assert state.n_samples == 32


def test_global_sampling_is_seeded(oracle):
    s1 = active.new_state(_mini_config(), oracle)
    s2 = active.new_state(_mini_config(), oracle)
    active.global_sampling(s1, 0)
    active.global_sampling(s2, 0)
    np.testing.assert_array_equal(s1.inputs, s2.inputs)
    np.testing.assert_array_equal(s1.targets, s2.targets)


def test_global_sampling_covers_quartiles(oracle):
    state = active.new_state(_mini_config(), oracle)
    points = active.global_sampling(state, 0)
    bounds = oracle.bounds
    unit = (points - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])
    for axis in range(4):
        quartiles = np.floor(unit[:, axis] * 4).astype(int)
        assert set(np.clip(quartiles, 0, 3)) == {0, 1, 2, 3}


def test_local_sampling_with_nonconvex_surrogate(oracle):
    # a concave-everywhere surrogate leaves the convexity stream empty
    state = active.new_state(_mini_config(), oracle)
    active.global_sampling(state, 0)
    w = np.array([[0.0, -1.0, -1.0, -1.0]])
    state.idnn = nets.IDNN(nets.DenseNet(
        [w], [np.zeros(1)], nets.get_activation("linear"), 4,
        transforms=active.default_transforms()))
    before = state.n_samples
    active.local_sampling(state, 1)
    streams = [stream for _, stream in state.provenance[before:]]
    assert streams.count("convexity") == 0
    assert streams.count("error") == 4      # half of local_batch 8


def test_local_sampling_falls_back_when_exact(oracle):
    # oracle whose potential IS the surrogate gradient: no error signal
    state = active.new_state(_mini_config(), oracle)
    active.global_sampling(state, 0)
    exact = active.Oracle(
        free_energy=lambda x: nets.forward(state.idnn, x),
        chemical_potential=lambda x: nets.gradient_out(state.idnn, x),
        bounds=oracle.bounds, well_centers=oracle.well_centers)
    state.oracle = exact
    before = state.n_samples
    active.local_sampling(state, 1)
    streams = [stream for _, stream in state.provenance[before:]]
    assert streams.count("error") == 4


def test_down_selection_drops_near_duplicates(oracle):
    state = active.new_state(_mini_config(down_select_radius=10.0), oracle)
    active.global_sampling(state, 0)
    n = state.n_samples
    # radius 10 covers the whole box: the second batch is fully rejected
    active.global_sampling(state, 2)
    assert state.n_samples == n


# ---------------------------------------------------------------------------
# training and search
# ---------------------------------------------------------------------------

def test_surrogate_training_on_quadratic_data(oracle):
    rng = np.random.default_rng(3)
    config = _mini_config(train_epochs=600, polish_epochs=300,
                          hidden=(16, 16))
    state = active.new_state(config, oracle)
    state.idnn = nets.make_idnn(4, [16, 16], seed=0)   # plain inputs
    x = oracle.bounds[:, 0] + rng.random((300, 4)) * (
        oracle.bounds[:, 1] - oracle.bounds[:, 0])
    state.inputs = x
    state.targets = 2.0 * x          # gradient of |eta|^2
    state.provenance = [(0, "global")] * 300
    active.surrogate_training(state)
    pred = nets.gradient_out(state.idnn, x)
    rmse = np.sqrt(np.mean((pred - 2.0 * x) ** 2))
    assert rmse < 1e-2
    assert state.training_log[-1]["dataset_size"] == 300
    assert np.isfinite(state.training_log[-1]["loss"])


def test_zero_epoch_training_leaves_parameters(oracle):
    state = active.new_state(_mini_config(train_epochs=0, polish_epochs=0),
                             oracle)
    active.global_sampling(state, 0)
    before = [p.copy() for p in state.idnn.net.parameters()]
    active.surrogate_training(state)
    for old, new in zip(before, state.idnn.net.parameters()):
        np.testing.assert_array_equal(old, new)
    assert len(state.training_log) == 1


def test_training_requires_data(oracle):
    state = active.new_state(_mini_config(), oracle)
    with pytest.raises(ConfigurationError, match="empty"):
        active.surrogate_training(state)


def test_search_selects_single_candidate(oracle):
    state = active.new_state(_mini_config(search_grid=((5, 5),)), oracle)
    active.global_sampling(state, 0)
    selected = active.hyperparameter_search(state, 1)
    assert selected == (5, 5)
    assert state.idnn.net.layer_sizes[1:-1] == (5, 5)


def test_search_selection_is_argmin(oracle):
    state = active.new_state(_mini_config(), oracle)
    active.global_sampling(state, 0)
    selected = active.hyperparameter_search(state, 1)
    log = {entry["hidden"]: entry["validation_loss"]
           for entry in state.search_log}
    assert len(log) == 2
    assert log[selected] == min(log.values())


def test_search_is_seeded(oracle):
    picks = []
    for _ in range(2):
        state = active.new_state(_mini_config(), oracle)
        active.global_sampling(state, 0)
        picks.append(active.hyperparameter_search(state, 1))
    assert picks[0] == picks[1]


def test_search_rejects_empty_grid(oracle):
    state = active.new_state(_mini_config(search_grid=()), oracle)
    active.global_sampling(state, 0)
    with pytest.raises(ConfigurationError, match="grid"):
        active.hyperparameter_search(state, 1)


# ---------------------------------------------------------------------------
# full workflow
# ---------------------------------------------------------------------------

def test_single_round_runs_each_stage_once(oracle):
    config = _mini_config(rounds=1)
    state = active.main_workflow(config, oracle)
    assert state.n_samples == config.global_batch + config.local_batch
    assert len(state.training_log) == 1
    assert len(state.search_log) == 0        # search fires at round 1 only
    tags = sorted({tag for tag, _ in state.provenance})
    assert tags == [0, 1]


def test_two_rounds_include_search(oracle):
    state = active.main_workflow(_mini_config(rounds=2), oracle)
    assert len(state.search_log) == 2        # one entry per grid candidate


def test_dataset_size_accounting(oracle):
    config = _mini_config(rounds=3)
    state = active.main_workflow(config, oracle)
    expected = 3 * (config.global_batch + config.local_batch)
    assert state.n_samples == expected
    assert len(state.provenance) == expected


def test_zero_local_batch_grows_only_globally(oracle):
    config = _mini_config(rounds=2, local_batch=0)
    state = active.main_workflow(config, oracle)
    assert state.n_samples == 2 * config.global_batch
    assert all(stream == "global" for _, stream in state.provenance)


def test_workflow_is_deterministic(oracle):
    runs = [active.main_workflow(_mini_config(), oracle) for _ in range(2)]
    np.testing.assert_array_equal(runs[0].inputs, runs[1].inputs)
    np.testing.assert_array_equal(runs[0].targets, runs[1].targets)
    assert runs[0].provenance == runs[1].provenance
    for p0, p1 in zip(runs[0].idnn.net.parameters(),
                      runs[1].idnn.net.parameters()):
        np.testing.assert_array_equal(p0, p1)


def test_well_fraction_increases(oracle):
    # The well balls are thin in 4D, so a 32-point exploration batch misses
    # them (checked below); refinement rounds still land points inside.
    config = active.WorkflowConfig(
        rounds=4, global_batch=32, local_batch=32, screening_batch=128,
        hidden=(16, 16), train_epochs=300, polish_epochs=100,
        search_grid=((12, 12), (16, 16)), search_epochs=50, seed=3)
    state = active.main_workflow(config, oracle)

    def well_fraction(points):
        d = np.min(np.linalg.norm(
            points[:, None, :] - state.oracle.well_centers[None, :, :],
            axis=2), axis=1)
        return np.mean(d < 0.12)

    round0 = state.inputs[:config.global_batch]
    assert well_fraction(round0) == 0.0
    assert well_fraction(state.inputs) > 0.0
    assert active.convex_well_count(state) == 5


def test_slice_grid_shape(oracle):
    state = active.new_state(_mini_config(), oracle)
    eta0, eta1, values = active.free_energy_slice(state, n_points=11)
    assert eta0.shape == eta1.shape == values.shape == (121,)
    assert np.min(eta0) == oracle.bounds[0, 0]
    assert np.max(eta1) == oracle.bounds[1, 1]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        active.WorkflowConfig(rounds=0)
    with pytest.raises(ConfigurationError):
        active.WorkflowConfig(convexity_fraction=1.5)
    with pytest.raises(ConfigurationError):
        active.WorkflowConfig(down_select_radius=-1.0)
