import json

import numpy as np
import pytest

from dsse import cmcgd
from dsse.complexstats import ComplexGaussian, CorrelationMatrix
from dsse.estimator import (
    Measurement, MeasurementSet, ObservabilityError, align_pseudo_angles, build_prior, estimate,
    local_frame_covariance, magnitude_angle_variance, propagate_states, quality, state_transform,
    write_estimate_csv, write_estimate_json)
from dsse.harness.networks import DEFAULT_METERS, SIX_BUS_PSEUDO_CURRENTS, six_bus_network
from dsse.harness.scenario import ScenarioConfig, build_scenario
from dsse.netmodel import Branch, Bus, RadialNetwork, build_flow_matrices, direct_power_flow


def pseudo_set(net, steps=1, eps=50.0, scale=1.0, extra=()):
    nominal = net.nominal_loads()
    p = net.phase_count
    entries = [Measurement("injected_current", net.order[k // p], scale * nominal[k], eps,
                           k % p, s, real=False)
               for s in range(steps) for k in range(net.n_states)]
    vref = np.tile(net.reference_voltage(), (steps, 1))
    return MeasurementSet(tuple(entries) + tuple(extra), vref)


def identity_cr(net, nt=1):
    return CorrelationMatrix(np.eye(2 * net.n_states * nt), nt, net.n_states,
                             tuple(net.state_labels()))


# -- measurement data ----------------------------------------------------------------------


def test_measurement_validation():
    with pytest.raises(ValueError, match="kind"):
        Measurement("power", "1", 1, 3)
    with pytest.raises(ValueError, match="epsilon"):
        Measurement("bus_voltage", "1", 1, -1)
    assert Measurement("bus_voltage", 4, 1, 0).target == "4"


def test_measurement_set_rejects_duplicates_and_bad_pseudo():
    m = Measurement("bus_voltage", "1", 230, 3)
    with pytest.raises(ValueError, match="duplicate"):
        MeasurementSet((m, m), [230])
    with pytest.raises(ValueError, match="pseudo"):
        MeasurementSet((Measurement("bus_voltage", "1", 230, 3, real=False),), [230])
    with pytest.raises(ValueError, match="step"):
        MeasurementSet((Measurement("bus_voltage", "1", 230, 3, step=2),), [230, 230])


def test_measurement_set_json_round_trip(tmp_path):
    net = six_bus_network()
    ms = pseudo_set(net, 2, extra=(Measurement("branch_current", "3", 10 - 2j, 3, step=1),))
    ms.write(tmp_path / "m.json")
    back = MeasurementSet.read(tmp_path / "m.json")
    assert back.entries == ms.entries
    np.testing.assert_array_equal(back.vref, ms.vref)
    data = json.loads((tmp_path / "m.json").read_text())
    del data["measurements"][0]["kind"]
    with pytest.raises(ValueError, match="malformed"):
        MeasurementSet.from_dict(data)


# -- prior and frames --------------------------------------------------------------------------


def test_angle_alignment_is_consistent_with_load_flow():
    net = six_bus_network()
    fm = build_flow_matrices(net)
    local = net.nominal_loads()
    glob = align_pseudo_angles(fm, local, net.reference_voltage())
    _, v = direct_power_flow(fm, glob, net.base_voltage)
    # each current keeps its angle relative to its own bus voltage
    np.testing.assert_allclose(np.angle(glob / v), np.angle(local), atol=1e-10)
    np.testing.assert_allclose(np.abs(glob), np.abs(local))
    np.testing.assert_array_equal(align_pseudo_angles(fm, local, 230, "none"), local)
    with pytest.raises(ValueError):
        align_pseudo_angles(fm, local, 230, "bogus")


def test_local_frame_covariance_rotation():
    cr = CorrelationMatrix(np.eye(2), 1, 1)
    local = np.array([10.0 + 0j])
    g0, c0 = local_frame_covariance(local, local, [30.0], cr)
    g1, c1 = local_frame_covariance(local, 1j * local, [30.0], cr)
    # a quarter turn keeps the covariance and flips the pseudo-covariance
    np.testing.assert_allclose(g1, g0)
    np.testing.assert_allclose(c1, -c0)


def test_prior_moments():
    net = six_bus_network()
    ms = pseudo_set(net)
    prior = build_prior(net, ms, identity_cr(net), angle_reference="none")
    nominal = net.nominal_loads()
    np.testing.assert_allclose(prior.mean, nominal)
    sd = nominal * 50 / 300
    np.testing.assert_allclose(np.real(np.diag(prior.gamma)), np.abs(sd) ** 2)


def test_missing_pseudo_is_unobservable():
    net = six_bus_network()
    ms = pseudo_set(net)
    ms = MeasurementSet(ms.entries[1:], ms.vref)
    with pytest.raises(ObservabilityError, match="'1'"):
        estimate(net, identity_cr(net), ms, mode="cs")


def test_window_needs_history():
    net = six_bus_network()
    with pytest.raises(ValueError, match="earlier data"):
        estimate(net, identity_cr(net, 3), pseudo_set(net, 2), mode="cst", nt=3)
    with pytest.raises(ValueError, match="nt"):
        estimate(net, identity_cr(net, 3), pseudo_set(net, 2), mode="cst", nt=11)


def test_mode_validation():
    net = six_bus_network()
    with pytest.raises(ValueError, match="mode"):
        estimate(net, identity_cr(net), pseudo_set(net), mode="wls")


# -- estimates -------------------------------------------------------------------------------------


def test_no_real_measurements_gives_load_flow_of_prior():
    net = six_bus_network()
    ms = pseudo_set(net)
    fm = build_flow_matrices(net)
    est = estimate(net, identity_cr(net), ms, mode="cs")
    glob = align_pseudo_angles(fm, net.nominal_loads(), net.reference_voltage())
    ib, v = direct_power_flow(fm, glob, net.base_voltage)
    np.testing.assert_allclose(est.voltages, v, rtol=1e-12)
    np.testing.assert_allclose(est.mean("branch_current"), ib, rtol=1e-12)
    assert est.iterations == 1


def test_exact_injection_meter_is_reproduced():
    net = six_bus_network()
    value = 12 - 8j
    ms = pseudo_set(net, extra=(Measurement("injected_current", "3", value, 0.0),))
    est = estimate(net, identity_cr(net), ms, mode="cs")
    k = net.state_index("3")
    assert est.mean("injected_current")[k] == pytest.approx(value, abs=1e-9)
    assert est.var_mag[k] == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("network", ["six_bus", "lv23"])
def test_extra_meter_never_increases_a_variance(network):
    base = build_scenario(ScenarioConfig(network=network, seed=2, loading=(0.7,)))
    more = build_scenario(ScenarioConfig(network=network, seed=2, loading=(0.7,),
                                         meters=DEFAULT_METERS[network] + (base.net.order[-1],)))
    a = estimate(base.net, base.cr, base.measurements, mode="cs")
    b = estimate(more.net, more.cr, more.measurements, mode="cs")
    assert len(more.measurements.select(real=True)) > len(base.measurements.select(real=True))
    # variances are in A^2 and V^2; compare against a tolerance relative to their size
    tol = 1e-10 * np.maximum(1.0, a.gamma_diag)
    assert np.all(b.gamma_diag <= a.gamma_diag + tol)


def test_correlation_spreads_information():
    net = six_bus_network()
    n = net.n_states
    m = np.eye(2 * n)
    m[:n, :n] = m[n:, n:] = 0.9
    np.fill_diagonal(m, 1.0)
    m[:n, n:] = m[n:, :n] = -0.9 * np.ones((n, n))
    cr = CorrelationMatrix(m, 1, n, tuple(net.state_labels()))
    fm = build_flow_matrices(net)
    truth = align_pseudo_angles(fm, 0.6 * net.nominal_loads(), net.reference_voltage())
    k = net.state_index("1")
    meter = Measurement("injected_current", "1", truth[k], 3.0)
    ms = pseudo_set(net, extra=(meter,))
    with_corr = estimate(net, cr, ms, mode="cs")
    without = estimate(net, identity_cr(net), ms, mode="cs")
    err = lambda e: np.abs(e.mean("injected_current") - truth).sum()
    assert err(with_corr) < 0.5 * err(without)


def test_cst_equals_cs_for_nt_one():
    data = build_scenario(ScenarioConfig(seed=4))
    a = estimate(data.net, data.cr, data.measurements, mode="cs", step=1)
    b = estimate(data.net, data.cr, data.measurements, mode="cst", nt=1, step=1)
    np.testing.assert_array_equal(a.mu_ibv, b.mu_ibv)
    np.testing.assert_array_equal(a.gamma_ibv, b.gamma_ibv)
    np.testing.assert_array_equal(a.c_ibv, b.c_ibv)
    np.testing.assert_array_equal(a.var_mag, b.var_mag)


def test_cst_uses_past_meters():
    net = six_bus_network()
    n = net.n_states
    # strong lag-1 correlation, no spatial correlation
    cr = np.eye(4 * n)
    for q in (0, 2 * n):
        cr[q + np.arange(n), q + n + np.arange(n)] = 0.9
        cr[q + n + np.arange(n), q + np.arange(n)] = 0.9
    cr = CorrelationMatrix(cr, 2, n, tuple(net.state_labels()))
    meter = Measurement("injected_current", "2", 5 - 5j, 3.0, step=0)
    ms = pseudo_set(net, 2, extra=(meter,))
    cs = estimate(net, cr, ms, mode="cs", step=1)
    cst = estimate(net, cr, ms, mode="cst", nt=2, step=1)
    k = net.state_index("2")
    assert cs.mean("injected_current")[k] == pytest.approx(net.nominal_loads()[k], rel=0.05)
    assert abs(cst.mean("injected_current")[k] - (5 - 5j)) < abs(cs.mean("injected_current")[k] - (5 - 5j))
    assert cst.steps == (0, 1) and cst.nt == 2


def test_single_conditioning_pass(monkeypatch):
    data = build_scenario(ScenarioConfig(seed=1, meters=("1", "3")))
    calls = []
    real = cmcgd._posterior
    monkeypatch.setattr(cmcgd, "_posterior", lambda *a: calls.append(1) or real(*a))
    est = estimate(data.net, data.cr, data.measurements, mode="cst", nt=3)
    assert len(calls) == 1 and est.iterations == 1


def test_branch_and_voltage_meters():
    net = six_bus_network()
    fm = build_flow_matrices(net)
    truth = align_pseudo_angles(fm, 0.7 * net.nominal_loads(), net.reference_voltage())
    ib, v = direct_power_flow(fm, truth, net.base_voltage)
    k = net.state_index("4")
    meters = (Measurement("branch_current", "4", ib[k], 0.0),
              Measurement("bus_voltage", "3", v[net.state_index("3")], 0.5))
    est = estimate(net, identity_cr(net), pseudo_set(net, extra=meters), mode="cs")
    # the branch into leaf bus 4 carries exactly the load of bus 4
    assert est.mean("injected_current")[k] == pytest.approx(ib[k], abs=1e-8)
    assert est.mean("branch_current")[k] == pytest.approx(ib[k], abs=1e-8)


def test_posterior_is_psd():
    data = build_scenario(ScenarioConfig(seed=2))
    est = estimate(data.net, data.cr, data.measurements, mode="cst", nt=3)
    aug = est.posterior.augmented()
    assert np.linalg.eigvalsh(aug)[0] >= -1e-9 * np.abs(aug).max()


def test_lazy_blocks_match_full_covariance():
    data = build_scenario(ScenarioConfig(network="lv23", seed=0))
    est = estimate(data.net, data.cr, data.measurements, mode="cst", nt=2)
    g = est.gamma_ibv
    np.testing.assert_allclose(np.real(np.diag(g)), est.gamma_diag, rtol=1e-10, atol=1e-12 * g.max().real)
    np.testing.assert_allclose(np.diag(est.c_ibv), est.c_diag, atol=1e-10 * g.max().real)
    idx = est.section("bus_voltage", 0)
    np.testing.assert_allclose(est.model("bus_voltage", 0).gamma, g[np.ix_(idx, idx)],
                               atol=1e-10 * g.max().real)


def test_propagate_states_accepts_injection_model():
    net = six_bus_network()
    fm = build_flow_matrices(net)
    n = net.n_states
    model = ComplexGaussian(net.nominal_loads(), np.eye(n), np.zeros((n, n)))
    est = propagate_states(model, fm, [net.base_voltage])
    np.testing.assert_allclose(est.mu_ibv, state_transform(fm, 1) @ np.r_[model.mean, net.base_voltage])
    with pytest.raises(ValueError, match="dimension"):
        propagate_states(ComplexGaussian(np.zeros(2), np.eye(2), np.zeros((2, 2))), fm, [230])


# -- magnitude and angle variances --------------------------------------------------------------


@pytest.mark.parametrize("spread", [0.01, 0.03])
def test_delta_method_against_monte_carlo(spread):
    rng = np.random.default_rng(11)
    mean = np.array([220 - 15j, -3 + 40j, 100 + 0j])
    f = rng.standard_normal((6, 6))
    k = f @ f.T
    # scale so that sqrt(trace of each 2x2 block) / |mean| equals ``spread``
    sd = np.abs(mean) * spread
    d = np.sqrt(np.diag(k)[:3] + np.diag(k)[3:])
    scale = np.r_[sd / d, sd / d]
    k = k * np.outer(scale, scale)
    g = ComplexGaussian.from_composite(mean, k)
    var_mag, var_ang = magnitude_angle_variance(g)
    x = rng.multivariate_normal(np.r_[mean.real, mean.imag], k, 10 ** 6)
    z = x[:, :3] + 1j * x[:, 3:]
    np.testing.assert_allclose(var_mag, np.abs(z).var(axis=0), rtol=0.1)
    np.testing.assert_allclose(var_ang, np.angle(z / mean).var(axis=0), rtol=0.1)


def test_zero_mean_with_spread_raises():
    g = ComplexGaussian(np.zeros(1), np.eye(1), np.zeros((1, 1)))
    with pytest.raises(ValueError, match="zero mean"):
        magnitude_angle_variance(g)
    vm, va = magnitude_angle_variance(ComplexGaussian(np.zeros(1), np.zeros((1, 1)), np.zeros((1, 1))))
    assert vm[0] == 0 and va[0] == 0


# -- quality ---------------------------------------------------------------------------------------


def test_quality_is_log_inverse_trace():
    data = build_scenario(ScenarioConfig(seed=0))
    est = estimate(data.net, data.cr, data.measurements, mode="cs")
    idx = est.section("bus_voltage")
    tr = np.real(np.trace(est.gamma_ibv[np.ix_(idx, idx)]))
    assert quality(est) == pytest.approx(np.log(1 / tr))
    assert quality(est, base=100.0) == pytest.approx(np.log(1e4 / tr))
    with pytest.raises(ValueError):
        quality(est, scope="nope")


def test_prior_quality_is_available_and_lower():
    # an empty real-measurement set gives the propagated prior
    data = build_scenario(ScenarioConfig(seed=0))
    base = data.net.base_voltage
    pre = estimate(data.net, data.cr, data.measurements, real=MeasurementSet((), data.vref), mode="cs")
    post = estimate(data.net, data.cr, data.measurements, mode="cs")
    assert quality(pre, base=base) < quality(post, base=base)


def test_quality_invariant_to_bus_ordering():
    net = six_bus_network()
    shuffled = RadialNetwork(tuple(reversed(net.buses)), tuple(reversed(net.branches)),
                             net.reference_bus, net.base_voltage)
    meter = Measurement("injected_current", "3", 10 - 9j, 3.0)
    q = [quality(estimate(n, identity_cr(n), pseudo_set(n, extra=(meter,)), mode="cs"))
         for n in (net, shuffled)]
    assert q[0] == pytest.approx(q[1], rel=1e-12)


def test_quality_infinite_for_exact_state():
    net = RadialNetwork((Bus("0"), Bus("1", 1, (1 + 0j,))), (Branch("0", "1", 1 + 1j),), "0", 230.0)
    ms = MeasurementSet((Measurement("injected_current", "1", 1, 0.0, real=False),), [230], 0.0)
    est = estimate(net, identity_cr(net), ms, mode="cs")
    assert quality(est) == float("inf")


# -- export ----------------------------------------------------------------------------------------


def test_csv_and_json_export(tmp_path):
    net = six_bus_network()
    est = estimate(net, identity_cr(net), pseudo_set(net), mode="cs")
    write_estimate_csv(est, net, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "kind,id,phase,step,mean_re,mean_im,var_mag,var_ang"
    assert len(lines) == 1 + 3 * net.n_states
    write_estimate_json(est, net, tmp_path / "e.json", full=True)
    data = json.loads((tmp_path / "e.json").read_text())
    assert data["iterations"] == 1 and len(data["gamma_ibv"]["re"]) == 3 * net.n_states
    assert set(SIX_BUS_PSEUDO_CURRENTS) == {s["id"] for s in data["states"]}
