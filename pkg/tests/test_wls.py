import numpy as np
import pytest
from scipy import optimize

from dsse.complexstats import CorrelationMatrix
from dsse.estimator import (
    Measurement, MeasurementSet, ObservabilityError, align_pseudo_angles, estimate)
from dsse.harness.networks import six_bus_network
from dsse.harness.scenario import ScenarioConfig, build_scenario
from dsse.netmodel import admittance_matrix, build_flow_matrices, direct_power_flow
from dsse.wls import WlsOptions, _rows, wls_estimate


def truth(net, load=0.7):
    fm = build_flow_matrices(net)
    i = align_pseudo_angles(fm, load * net.nominal_loads(), net.reference_voltage())
    ib, v = direct_power_flow(fm, i, net.base_voltage)
    return i, ib, v


def pseudo_entries(net, values, eps):
    return [Measurement("injected_current", net.order[k], values[k], eps, real=False)
            for k in range(net.n_states)]


def test_measurement_rows_reproduce_load_flow():
    net = six_bus_network()
    i, ib, v = truth(net)
    y, _ = admittance_matrix(net)
    v_all = np.r_[net.base_voltage, v]
    meas = [Measurement("injected_current", "3", 0, 1), Measurement("branch_current", "3", 0, 1),
            Measurement("branch_current", "5", 0, 1), Measurement("bus_voltage", "4", 0, 1)]
    h = _rows(net, y, meas) @ v_all
    k = net.index
    np.testing.assert_allclose(h, [i[k["3"]], ib[k["3"]], ib[k["5"]], v[k["4"]]], rtol=1e-10)


def test_exact_pseudo_data_recovers_truth():
    net = six_bus_network()
    i, _, v = truth(net, 0.7)
    local = 0.7 * net.nominal_loads()
    ms = MeasurementSet(tuple(pseudo_entries(net, local, 1e-3)), [net.base_voltage], 1e-3)
    res = wls_estimate(net, ms)
    assert res.converged
    np.testing.assert_allclose(res.voltages, v, rtol=1e-8)
    assert res.residual_norm < 1e-6


def floored(var, rel=1e-8):
    return var + rel * var + rel * var.max()


def test_wls_estimator_and_load_flow_agree_on_exact_data():
    net = six_bus_network()
    i, _, v = truth(net, 0.6)
    local = 0.6 * net.nominal_loads()
    meters = tuple(Measurement("injected_current", net.order[k], i[k], 1e-6)
                   for k in range(net.n_states))
    ms = MeasurementSet(tuple(pseudo_entries(net, local, 50)) + meters, [net.base_voltage], 1e-6)
    res = wls_estimate(net, ms)
    cr = CorrelationMatrix(np.eye(2 * net.n_states), 1, net.n_states, tuple(net.state_labels()))
    est = estimate(net, cr, ms, mode="cs")
    np.testing.assert_allclose(res.voltages, v, rtol=1e-6)
    np.testing.assert_allclose(est.voltages, v, rtol=1e-6)


def test_matches_generic_least_squares():
    cfg = ScenarioConfig(seed=3, meter_kind="branch_current")
    data = build_scenario(cfg)
    net, ms = data.net, data.measurements
    res = wls_estimate(net, ms, WlsOptions(step=1, tol=1e-12))
    # the same weighted objective with diagonal local-frame pseudo errors,
    # built by hand and handed to a general-purpose solver
    y, _ = admittance_matrix(net)
    real = ms.select(real=True, steps=[1])
    pseudo = ms.select(real=False, steps=[1])
    local = np.array([m.value for m in pseudo])
    glob = align_pseudo_angles(build_flow_matrices(net), local, ms.vref[1])
    sd_loc = np.array([m.value * m.epsilon / 300 for m in pseudo])
    npz = len(pseudo)
    # 2x2 blocks: rotate the local (re, im) covariance by the alignment angle
    th = np.angle(glob) - np.angle(local)
    var_p = np.zeros((npz, 2, 2))
    for k in range(npz):
        rot = np.array([[np.cos(th[k]), -np.sin(th[k])], [np.sin(th[k]), np.cos(th[k])]])
        var_p[k] = rot @ np.diag([sd_loc[k].real ** 2, sd_loc[k].imag ** 2]) @ rot.T
    dp = floored(np.r_[var_p[:, 0, 0], var_p[:, 1, 1]])
    var_p[:, 0, 0], var_p[:, 1, 1] = dp[:npz], dp[npz:]
    sd_rv = np.r_[[m.value * m.epsilon / 300 for m in real], ms.vref[1] * ms.vref_epsilon / 300]
    drv = floored(np.r_[sd_rv.real ** 2, sd_rv.imag ** 2])
    nrv = sd_rv.size
    whit = [np.linalg.inv(np.linalg.cholesky(b)) for b in var_p]
    z = np.r_[glob, [m.value for m in real], ms.vref[1]]
    mm = np.vstack([_rows(net, y, pseudo), _rows(net, y, real), np.eye(1, net.n_states + 1)])
    n = net.n_states + 1
    base = net.base_voltage

    def resid(x):
        r = mm @ (x[:n] * base * np.exp(1j * x[n:])) - z
        rp = np.concatenate([w @ [a.real, a.imag] for w, a in zip(whit, r[:npz])])
        rr = r[npz:]
        return np.r_[rp, rr.real / np.sqrt(drv[:nrv]), rr.imag / np.sqrt(drv[nrv:])]

    sol = optimize.least_squares(resid, np.r_[np.full(n, 0.97), np.full(n, -0.01)],
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15)
    np.testing.assert_allclose(res.vm, sol.x[:n], atol=1e-7)
    np.testing.assert_allclose(res.va, sol.x[n:], atol=1e-7)


def test_real_injection_supersedes_pseudo():
    net = six_bus_network()
    local = net.nominal_loads()
    i, _, v = truth(net, 0.5)
    k = net.index["2"]
    meter = Measurement("injected_current", "2", i[k], 1e-3)
    ms = MeasurementSet(tuple(pseudo_entries(net, local, 50)) + (meter,), [net.base_voltage])
    res = wls_estimate(net, ms)
    y, _ = admittance_matrix(net)
    inj = -(y @ res.all_voltages)[1:]
    assert inj[k] == pytest.approx(i[k], rel=1e-4)


def test_converges_quickly_on_six_bus():
    data = build_scenario(ScenarioConfig(seed=0))
    for s in range(3):
        res = wls_estimate(data.net, data.measurements, WlsOptions(step=s, cr=data.cr.spatial()))
        assert res.converged and 1 <= res.iterations <= 10


def test_correlated_weights_change_the_estimate():
    # a branch meter leaves one redundant measurement, so the weights matter
    data = build_scenario(ScenarioConfig(seed=0, meter_kind="branch_current"))
    a = wls_estimate(data.net, data.measurements, WlsOptions(cr=data.cr.spatial()))
    b = wls_estimate(data.net, data.measurements, WlsOptions())
    assert np.max(np.abs(a.voltages - b.voltages) / np.abs(b.voltages)) > 1e-6


def test_exactly_determined_system_ignores_weights():
    # an injection meter replaces its pseudo value: as many measurements as unknowns
    data = build_scenario(ScenarioConfig(seed=0))
    a = wls_estimate(data.net, data.measurements, WlsOptions(cr=data.cr.spatial()))
    b = wls_estimate(data.net, data.measurements, WlsOptions())
    np.testing.assert_allclose(a.voltages, b.voltages, rtol=1e-10)


def test_perfectly_correlated_pseudo_data_is_handled():
    net = six_bus_network()
    n = net.n_states
    m = np.ones((2 * n, 2 * n))
    m[:n, n:] = m[n:, :n] = -1
    cr = CorrelationMatrix(m, 1, n, tuple(net.state_labels()))
    ms = MeasurementSet(tuple(pseudo_entries(net, net.nominal_loads(), 50)), [net.base_voltage])
    res = wls_estimate(net, ms, WlsOptions(cr=cr))
    assert res.converged


def test_unobservable_without_pseudo_data():
    net = six_bus_network()
    ms = MeasurementSet((Measurement("bus_voltage", "1", net.base_voltage, 1),), [net.base_voltage])
    with pytest.raises(ObservabilityError):
        wls_estimate(net, ms)


def test_voltage_covariance_and_quality():
    data = build_scenario(ScenarioConfig(seed=0))
    res = wls_estimate(data.net, data.measurements)
    cov = res.voltage_cov
    assert cov.shape == (2 * data.net.n_states,) * 2
    assert np.linalg.eigvalsh(cov)[0] >= -1e-9 * np.abs(cov).max()
    assert res.quality() == pytest.approx(np.log(1 / np.trace(cov)))
    assert res.n_ref == 1 and res.voltages.size == data.net.n_states


def test_three_phase_network_runs():
    data = build_scenario(ScenarioConfig(network="lv23", seed=0))
    res = wls_estimate(data.net, data.measurements, WlsOptions(cr=data.cr.spatial()))
    assert res.converged and res.n_ref == 3
    err = np.abs(np.abs(res.voltages) - np.abs(data.true_voltages[-1])) / np.abs(data.true_voltages[-1])
    assert err.max() < 0.1
