"""Case-study runner: truth, measurements, estimators, metrics.

Per step the true load currents are the nominal loads scaled by the loading
factor with a small random spread; truth voltages come from the direct load
flow. Metered targets are sampled as truth plus Gaussian noise at the real
measurement error, every injection gets its nominal value as a pseudo
measurement, and each requested estimator runs on the same data.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dsse.complexstats import CorrelationMatrix
from dsse.estimator import (
    Measurement, MeasurementSet, align_pseudo_angles, build_prior, estimate, quality,
    write_estimate_csv, _mag_ang,
)
from dsse.harness.generator import CommunitySpec, correlation_from_profiles, gen_synthetic_profiles
from dsse.harness.metrics import MetricsReport, error_metrics
from dsse.harness.networks import BUNDLED, DEFAULT_METERS, bundled_network
from dsse.netmodel import (
    RadialNetwork, build_flow_matrices, direct_power_flow, perturb_rx_ratio, read_network,
)
from dsse.wls import WlsOptions, wls_estimate

MODES = ("wls", "cs", "cst")
LOAD_MODELS = ("current", "power")

# correlation source used for generated scenarios: community-wide noise that
# is white, customer noise that persists from one minute to the next
SCENARIO_COMMUNITY = dict(customers_per_area=20, noise_sd=0.4, common_component_weight=0.6,
                          shared_ar=0.0, idiosyncratic_ar=0.99, cross_type_share=1.0, n_days=4)
# per-network overrides: an LV bus phase serves a single household
NETWORK_COMMUNITY = {"lv23": dict(customers_per_area=1)}


@dataclass(frozen=True)
class ScenarioConfig:
    network: str = "six_bus"                   # bundled name or network file
    correlation: str = "generated"             # "generated" or a correlation CSV
    meters: tuple[str, ...] | None = None      # metered buses; None = network default
    meter_kind: str = "injected_current"
    loading: tuple[float, ...] = (0.8, 0.6, 0.4)
    modes: tuple[str, ...] = MODES
    nt: int = 3
    eps_real: float = 3.0
    eps_pseudo: float = 50.0
    eps_vref: float = 3.0
    rx_scale: float = 1.0
    seed: int = 0
    load_spread: float = 0.02                  # relative sd of true loads around the schedule
    community: dict = field(default_factory=dict)  # overrides for the correlation generator
    correlation_seed: int | None = None        # None = derived from seed
    wls_correlated: bool = True
    angle_reference: str = "powerflow"
    timing_repeats: int = 11                   # median over this many calls
    load_model: str = "current"                # truth loads: constant "current" or "power"

    def __post_init__(self):
        if not self.loading or any(x <= 0 for x in self.loading):
            raise ValueError("loading factors must be positive")
        bad = set(m.lower() for m in self.modes) - set(MODES)
        if bad:
            raise ValueError(f"unknown modes {sorted(bad)}; choose from {MODES}")
        if not 1 <= self.nt <= 10:
            raise ValueError("nt must be between 1 and 10")
        if self.rx_scale <= 0:
            raise ValueError("rx_scale must be positive")
        if self.load_model not in LOAD_MODELS:
            raise ValueError(f"load_model must be one of {LOAD_MODELS}")
        object.__setattr__(self, "loading", tuple(float(x) for x in self.loading))
        object.__setattr__(self, "modes", tuple(m.lower() for m in self.modes))
        if self.meters is not None:
            object.__setattr__(self, "meters", tuple(str(m) for m in self.meters))

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario keys {sorted(unknown)}")
        data = dict(data)
        for key in ("meters", "loading", "modes"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def read(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


def load_network(name_or_path: str, rx_scale: float = 1.0) -> RadialNetwork:
    net = bundled_network(name_or_path) if name_or_path in BUNDLED else read_network(name_or_path)
    return net if rx_scale == 1.0 else perturb_rx_ratio(net, rx_scale)


def scenario_correlation(net: RadialNetwork, nt: int, seed: int = 0, **overrides) -> CorrelationMatrix:
    """Correlation of synthetic profiles for every loaded state, one area per
    loaded bus and phase, load type taken from the bus group."""
    labels, groups = [], []
    p = net.phase_count
    for lab, bus in zip(net.state_labels(), (b for b in net.order for _ in range(p))):
        b = net.bus(bus)
        if b.load is not None:
            labels.append(lab)
            groups.append(b.group or "residential")
    params = {**SCENARIO_COMMUNITY, **overrides}
    spec = CommunitySpec(n_areas=len(labels), base_profile=tuple(groups), area_ids=tuple(labels),
                         seed=seed, **params)
    return correlation_from_profiles(gen_synthetic_profiles(spec), nt=nt, voltage=net.base_voltage)


@dataclass
class ScenarioData:
    net: RadialNetwork
    cr: CorrelationMatrix
    measurements: MeasurementSet
    true_injections: np.ndarray   # (steps, n) in the reference frame
    true_voltages: np.ndarray     # (steps, n)
    vref: np.ndarray              # (steps, p)


def constant_power_flow(fm, local, vref, v_nom: float, tol: float = 1e-12, max_iter: int = 200):
    """Load flow with constant-power loads. ``local`` are the currents drawn
    at nominal voltage, relative to each bus voltage; each bus keeps the
    power ``v_nom * conj(local)``. Returns ``(injections, branch, voltages)``."""
    local = np.asarray(local, dtype=complex)
    i = align_pseudo_angles(fm, local, vref, "powerflow")
    ib, v = direct_power_flow(fm, i, vref)
    for _ in range(max_iter):
        i = local * (v / np.abs(v)) * (v_nom / np.abs(v))
        ib, v_new = direct_power_flow(fm, i, vref)
        done = np.max(np.abs(v_new - v)) < tol * v_nom
        v = v_new
        if done:
            return i, ib, v
    raise ValueError("constant-power load flow did not converge; loading too high")


def _meter_targets(net, cfg):
    meters = cfg.meters if cfg.meters is not None else DEFAULT_METERS.get(cfg.network, ())
    for m in meters:
        net.state_index(m)  # raises for unknown buses
    return meters


def build_scenario(cfg: ScenarioConfig) -> ScenarioData:
    net = load_network(cfg.network, cfg.rx_scale)
    fm = build_flow_matrices(net)
    p = net.phase_count
    ss = np.random.SeedSequence(cfg.seed)
    truth_seed, noise_seed, corr_seed = ss.spawn(3)
    rng_truth = np.random.default_rng(truth_seed)
    rng_noise = np.random.default_rng(noise_seed)
    if cfg.correlation == "generated":
        cseed = cfg.correlation_seed
        if cseed is None:
            cseed = int(corr_seed.generate_state(1)[0])
        params = {**NETWORK_COMMUNITY.get(cfg.network, {}), **cfg.community}
        cr = scenario_correlation(net, cfg.nt, cseed, **params)
    else:
        cr = CorrelationMatrix.from_csv(cfg.correlation)

    nominal = net.nominal_loads()
    vref0 = net.reference_voltage()
    meters = _meter_targets(net, cfg)
    labels = net.state_labels()
    entries = []
    n_steps = len(cfg.loading)
    true_i = np.zeros((n_steps, net.n_states), dtype=complex)
    true_v = np.zeros((n_steps, net.n_states), dtype=complex)
    for s, load in enumerate(cfg.loading):
        spread = 1 + cfg.load_spread * rng_truth.standard_normal(net.n_states)
        local = nominal * load * spread
        if cfg.load_model == "power":
            true_i[s], ib, v = constant_power_flow(fm, local, vref0, net.base_voltage)
        else:
            true_i[s] = align_pseudo_angles(fm, local, vref0, "powerflow")
            ib, v = direct_power_flow(fm, true_i[s], vref0)
        true_v[s] = v
        for k, lab in enumerate(labels):
            bus, ph = net.order[k // p], k % p
            entries.append(Measurement("injected_current", bus, nominal[k], cfg.eps_pseudo,
                                       ph, s, real=False))
        section = {"injected_current": true_i[s], "branch_current": ib, "bus_voltage": v}
        values = section[cfg.meter_kind]
        for bus in meters:
            for ph in range(p):
                k = net.state_index(bus, ph)
                exact = values[k]
                sd = exact * cfg.eps_real / 300.0
                noisy = exact + abs(sd.real) * rng_noise.standard_normal() \
                    + 1j * abs(sd.imag) * rng_noise.standard_normal()
                entries.append(Measurement(cfg.meter_kind, bus, noisy, cfg.eps_real, ph, s))
    vref = np.tile(vref0, (n_steps, 1))
    ms = MeasurementSet(tuple(entries), vref, cfg.eps_vref)
    return ScenarioData(net, cr, ms, true_i, true_v, vref)


def _timed(fn, repeats):
    times = []
    out = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, float(np.median(times))


def wls_rows(res, net, step: int) -> list[dict]:
    """WLS voltages in the estimate CSV layout."""
    n = net.n_states
    cov = res.voltage_cov
    g = np.diag(cov)[:n] + np.diag(cov)[n:]
    c = np.diag(cov)[:n] - np.diag(cov)[n:] + 2j * np.diag(cov[n:, :n])
    vm, va = _mag_ang(res.voltages, g, c)
    p = net.phase_count
    return [{"kind": "bus_voltage", "id": net.order[k // p],
             "phase": "abc"[k % p] if p == 3 else "a", "step": step,
             "mean_re": float(v.real), "mean_im": float(v.imag),
             "var_mag": float(vm[k]), "var_ang": float(va[k])}
            for k, v in enumerate(res.voltages)]


def write_wls_csv(res, net, step: int, path) -> None:
    rows = wls_rows(res, net, step)
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def run_scenario(cfg: ScenarioConfig, out_dir=None, data: ScenarioData | None = None) -> MetricsReport:
    """Run every requested mode at every step and collect the metrics."""
    data = build_scenario(cfg) if data is None else data
    net, cr, ms = data.net, data.cr, data.measurements
    fm = build_flow_matrices(net)
    base = net.base_voltage
    report = MetricsReport()
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
    # offline part: priors depend only on pseudo data and correlation
    priors = {}
    for s in range(ms.n_steps):
        for nt in {1, min(cfg.nt, s + 1)}:
            if (s, nt) not in priors:
                priors[s, nt] = build_prior(net, ms, cr, nt, s, cfg.angle_reference, fm)
    spatial = cr.spatial() if cfg.wls_correlated else None
    for s, load in enumerate(cfg.loading):
        for mode in cfg.modes:
            try:
                if mode == "wls":
                    opts = WlsOptions(cr=spatial, step=s, angle_reference=cfg.angle_reference)
                    res, dt = _timed(lambda: wls_estimate(net, ms, opts), cfg.timing_repeats)
                    v_hat, q, iters = res.voltages, res.quality(base), res.iterations
                else:
                    nt = 1 if mode == "cs" else min(cfg.nt, s + 1)
                    est, dt = _timed(lambda: estimate(
                        net, cr, ms, mode=mode, nt=nt, step=s, angle_reference=cfg.angle_reference,
                        fm=fm, prior=priors[s, nt]), cfg.timing_repeats)
                    v_hat, q, iters = est.voltages, quality(est, base=base), est.iterations
            except ValueError as exc:
                raise type(exc)(f"{cfg.network}, step {s}, mode {mode}: {exc}") from exc
            m = error_metrics(v_hat, data.true_voltages[s])
            report.add(mode=mode, step=s, loading=load, quality=q, time_s=dt, iterations=iters, **m)
            if out is not None:
                path = out / f"states_{mode}_step{s}.csv"
                if mode == "wls":
                    write_wls_csv(res, net, s, path)
                else:
                    write_estimate_csv(est, net, path)
    if out is not None:
        report.to_csv(out / "metrics.csv")
        report.to_json(out / "metrics.json")
    return report


def bench(networks=("six_bus", "ieee123"), modes=MODES, repeats: int = 11, seed: int = 0,
          nt: int = 3) -> list[dict]:
    """Median wall time of one estimator call at the last step of a
    three-step scenario, per network and mode."""
    rows = []
    for name in networks:
        cfg = ScenarioConfig(network=name, modes=tuple(modes), seed=seed, nt=nt,
                             timing_repeats=repeats)
        data = build_scenario(cfg)
        rep = run_scenario(cfg, data=data)
        s = len(cfg.loading) - 1
        for mode in modes:
            r = rep.row(mode, s)
            rows.append({"network": name, "mode": mode, "n_states": data.net.n_states,
                         "median_s": r["time_s"], "iterations": r["iterations"]})
    return rows
