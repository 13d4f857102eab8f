"""Observable extraction and reduced-model identification tests.

Quadrature oracles: closed-form integrals for constant and ramp fields,
scipy.integrate.quad for the kink profile, and the dns energy function for
the Lyapunov cross-check. Sensitivity estimates are checked on synthetic
tables with constructed exact dependences.
"""

import numpy as np
import pandas as pd
import pytest
from scipy.integrate import quad

from fieldlearn import dns, fem, observables, regression
from fieldlearn.errors import (CapabilityError, ConfigurationError, DataError,
                               RankError)


def _series_from_profiles(profiles, n_nodes=65, length=16.0, dt=0.01):
    mesh = fem.make_interval_mesh(n_nodes, length)
    x = mesh.node_coords()[:, 0]
    values = np.array([np.asarray(p(x), dtype=float) for p in profiles])
    times = dt * np.arange(len(profiles))
    return dns.FieldSeries(mesh, times, values)


@pytest.fixture(scope="module")
def relaxing_series():
    params = dns.AllenCahnParams(mobility=1.0, n_steps=30, n_nodes=65,
                                 length=16.0)
    phi0 = dns.allen_cahn_initial_condition(params, seed=5,
                                            n_interfaces=(2, 2))
    return dns.solve_allen_cahn_1d(params, phi0)


# ---------------------------------------------------------------------------
# phase averages
# ---------------------------------------------------------------------------

def test_observable_labels():
    labels = observables.observable_labels()
    assert len(labels) == 18
    assert labels[0] == "phi_phi+"
    assert labels.index("phi_lap(phi)+") + 1 == labels.index("phi_lap(phi)-")
    assert "phi_f'(phi)+" in labels


def test_uniform_positive_phase():
    series = _series_from_profiles([lambda x: np.ones_like(x)] * 2)
    table = observables.phase_averages(series)
    assert table["phi_phi+"].iloc[0] == pytest.approx(1.0, rel=1e-13)
    assert table["phi_f(phi)+"].iloc[0] == pytest.approx(0.0, abs=1e-14)
    for label in observables.observable_labels():
        if label.endswith("-"):
            assert table[label].iloc[0] == 0.0
    assert table["Psi"].iloc[0] == pytest.approx(0.0, abs=1e-13)
    assert table["Psi+"].iloc[0] == pytest.approx(0.0, abs=1e-13)


def test_uniform_negative_phase():
    series = _series_from_profiles([lambda x: -np.ones_like(x)] * 2)
    table = observables.phase_averages(series)
    assert table["phi_phi-"].iloc[0] == pytest.approx(-1.0, rel=1e-13)
    for label in observables.observable_labels():
        if label.endswith("+"):
            assert table[label].iloc[0] == 0.0
    assert table["Psi"].iloc[0] == pytest.approx(0.0, abs=1e-13)


def test_phases_partition_the_domain():
    rng = np.random.default_rng(7)
    nodal = rng.uniform(-1, 1, 65)
    series = _series_from_profiles([lambda x: nodal])
    table = observables.phase_averages(series)
    mesh = series.mesh
    rule = fem.gauss_rule(3, 1)
    sf = fem.shape_eval(mesh, rule)
    vals = fem.interpolate_at_qp(mesh, sf, nodal)
    volume = (mesh.n_nodes - 1) * np.sum(sf.wdetj)
    for name, g in [("phi", vals), ("phi3", vals**3),
                    ("f(phi)", dns.double_well(vals))]:
        total = np.sum(g @ sf.wdetj) / volume
        split = table[f"phi_{name}+"].iloc[0] + table[f"phi_{name}-"].iloc[0]
        assert split == pytest.approx(total, rel=1e-13, abs=1e-15)
    # the nodal Laplacian integrates to zero with natural boundaries
    lap_sum = table["phi_lap(phi)+"].iloc[0] + table["phi_lap(phi)-"].iloc[0]
    assert abs(lap_sum) < 1e-12


def test_ramp_energy_closed_form():
    series = _series_from_profiles([lambda x: x], n_nodes=41, length=1.0)
    psi, psi_plus = observables.total_energy(series, gradient_coeff=1.0)
    assert psi[0] == pytest.approx(8.0 / 15.0 + 0.5, rel=1e-12)
    assert psi_plus[0] <= psi[0]


def test_kink_profile_half_domain():
    length, width = 16.0, np.sqrt(2.0)
    profile = lambda x: np.tanh((x - length / 2) / width)
    series = _series_from_profiles([profile], n_nodes=513, length=length)
    table = observables.phase_averages(series)
    reference = quad(lambda x: max(profile(np.array([x]))[0], 0.0),
                     0.0, length, points=[length / 2])[0] / length
    assert table["phi_phi+"].iloc[0] == pytest.approx(reference, abs=1e-5)
    assert abs(table["phi_phi+"].iloc[0] - 0.5) < 2 * width / length


def test_indicator_identity_for_well_slope(relaxing_series):
    table = observables.phase_averages(relaxing_series)
    for sign in "+-":
        expected = 4 * table[f"phi_phi3{sign}"] - 4 * table[f"phi_phi{sign}"]
        np.testing.assert_allclose(table[f"phi_f'(phi){sign}"], expected,
                                   rtol=1e-10, atol=1e-12)


def test_even_power_observables_nonnegative(relaxing_series):
    table = observables.phase_averages(relaxing_series)
    for label in ("phi_phi2+", "phi_phi4+", "Psi", "Psi+"):
        assert (table[label] >= 0).all()


def test_energy_matches_dns_and_decays(relaxing_series):
    psi, _ = observables.total_energy(relaxing_series)
    for row in (0, 10, 30):
        direct = dns.allen_cahn_energy(relaxing_series.values[row],
                                       relaxing_series.mesh, 1.0)
        assert psi[row] == pytest.approx(direct, rel=1e-13)
    assert np.all(np.diff(psi) <= 1e-12 * psi[0])


def test_requires_1d_series():
    mesh = fem.make_grid_mesh((5, 5), (1.0, 1.0))
    series = dns.FieldSeries(mesh, np.array([0.0]), np.zeros((1, 25)))
    with pytest.raises(CapabilityError, match="1D"):
        observables.phase_averages(series)
    with pytest.raises(ConfigurationError):
        observables.phase_averages(_series_from_profiles([np.cos]),
                                   gradient_coeff=0.0)


def test_trajectory_column_and_pooling():
    series = _series_from_profiles([np.cos, np.sin])
    t0 = observables.phase_averages(series, trajectory=4)
    assert (t0["trajectory"] == 4).all()
    t1 = observables.phase_averages(series)
    pooled = observables.pool_observables([t1, t1])
    assert sorted(pooled["trajectory"].unique()) == [0, 1]
    assert len(pooled) == 2 * len(t1)
    with pytest.raises(DataError):
        observables.pool_observables([])


# ---------------------------------------------------------------------------
# sensitivities
# ---------------------------------------------------------------------------

def _synthetic_table(n_rows=60, seed=0, psi=None, psi_plus=None):
    rng = np.random.default_rng(seed)
    data = {"trajectory": np.repeat([0, 1], n_rows // 2),
            "time": np.tile(np.linspace(0, 1, n_rows // 2), 2)}
    for label in observables.observable_labels():
        data[label] = rng.uniform(-1, 1, n_rows)
    table = pd.DataFrame(data)
    table["Psi"] = psi(table) if psi else rng.uniform(0, 1, n_rows)
    table["Psi+"] = psi_plus(table) if psi_plus else rng.uniform(0, 1, n_rows)
    return table


def test_constructed_linear_sensitivity():
    table = _synthetic_table(psi=lambda t: 2.0 * t["phi_phi+"],
                             psi_plus=lambda t: -3.0 * t["phi_phi+"])
    out = observables.functional_derivatives(table)
    np.testing.assert_allclose(out["dPsi/dphi_phi+"], 2.0, rtol=1e-6)
    np.testing.assert_allclose(out["dPsi+/dphi_phi+"], -3.0, rtol=1e-6)


def test_constant_energy_has_zero_sensitivities():
    table = _synthetic_table(psi=lambda t: np.full(len(t), 1.5),
                             psi_plus=lambda t: np.full(len(t), 0.5))
    out = observables.functional_derivatives(table)
    for label in observables.observable_labels():
        np.testing.assert_allclose(out[f"dPsi/d{label}"], 0.0, atol=1e-9)
        np.testing.assert_allclose(out[f"dPsi+/d{label}"], 0.0, atol=1e-9)


def test_sensitivity_labels():
    out = observables.functional_derivatives(_synthetic_table())
    assert "dPsi+/dphi_f'(phi)+" in out.columns
    assert "dPsi/dphi_lap(phi)-" in out.columns
    extra = [c for c in out.columns if c.startswith("dPsi")]
    assert len(extra) == 36


def test_sensitivities_need_spread_and_trajectories():
    table = _synthetic_table()
    table["phi_phi5-"] = 0.0
    with pytest.raises(RankError, match="trajectories"):
        observables.functional_derivatives(table)
    single = _synthetic_table()
    single["trajectory"] = 0
    with pytest.raises(DataError, match="trajector"):
        observables.functional_derivatives(single)
    with pytest.raises(DataError, match="missing"):
        observables.functional_derivatives(
            _synthetic_table().drop(columns=["phi_phi4+"]))


# ---------------------------------------------------------------------------
# basis sets and identification
# ---------------------------------------------------------------------------

def test_basis_sizes_and_nesting():
    table = observables.functional_derivatives(_synthetic_table())
    b1, b2, b3 = observables.build_basis_sets(table)
    assert (len(b1.labels), len(b2.labels), len(b3.labels)) == (18, 36, 54)
    assert set(b1.labels) < set(b2.labels) < set(b3.labels)
    assert b1.matrix.shape == (len(table), 18)
    np.testing.assert_array_equal(b1.target, b3.target)


def test_target_is_per_trajectory_time_derivative():
    table = _synthetic_table()
    # phi_phi+ linear in time with a different slope per trajectory:
    # central and one-sided differences are both exact
    slopes = np.where(table["trajectory"] == 0, 3.0, -1.5)
    table["phi_phi+"] = slopes * table["time"]
    out = observables.functional_derivatives(table)
    _, _, b3 = observables.build_basis_sets(out)
    np.testing.assert_allclose(b3.target, slopes, rtol=1e-12)
    np.testing.assert_array_equal(b3.dof_map[:, 0], table["trajectory"])


def test_basis_requires_sensitivity_columns():
    with pytest.raises(DataError, match="missing"):
        observables.build_basis_sets(_synthetic_table())


def test_identify_exact_synthetic_model():
    rng = np.random.default_rng(3)
    matrix = rng.standard_normal((120, 5))
    target = 2.0 * matrix[:, 0] - 1.0 * matrix[:, 3]
    basis = observables.BasisSet(
        "demo", tuple(f"op{j}" for j in range(5)), matrix, target,
        np.column_stack([np.zeros(120, dtype=int), np.arange(120)]))
    config = regression.StepwiseConfig(regression_method="ols")
    trace = observables.identify_reduced_model(basis, config)
    final = trace.identified
    assert set(final.active_labels) == {"op0", "op3"}
    np.testing.assert_allclose(
        sorted(final.coefficients), [-1.0, 2.0], atol=1e-10)


def test_identify_requires_columns():
    basis = observables.BasisSet(
        "tiny", ("only",), np.ones((4, 1)), np.ones(4),
        np.column_stack([np.zeros(4, dtype=int), np.arange(4)]))
    with pytest.raises(ConfigurationError, match="2 columns"):
        observables.identify_reduced_model(basis)


def test_mini_ensemble_chain():
    # two off-equilibrium trajectories; the full chain must run. Kinks at
    # equilibrium width barely move, and the derivative estimator rejects
    # the resulting near-constant observable columns.
    params = dns.AllenCahnParams(mobility=1.0, n_steps=30, n_nodes=65,
                                 length=16.0)
    series = [dns.solve_allen_cahn_1d(
        params, dns.allen_cahn_initial_condition(params, seed=seed,
                                                 n_interfaces=(2, 2),
                                                 width_factors=(0.6, 1.8)))
        for seed in (5, 9)]
    pooled = observables.pool_observables(
        [observables.phase_averages(one, trajectory=index)
         for index, one in enumerate(series)])
    expanded = observables.functional_derivatives(pooled)
    b1, b2, b3 = observables.build_basis_sets(expanded)
    trace = observables.identify_reduced_model(b3)
    assert np.isfinite(trace.identified.loss)
    assert len(trace.steps) >= 50      # eliminations ran down the basis
