"""Synthetic community load profiles.

Each customer follows the daily shape of its load type, modulated by a
noise component shared by every customer of that type and an individual
one; rooftop PV is subtracted at the requested penetration. Area profiles
are sums over customers, so individual noise averages out as areas grow
while the shared part does not.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from dsse.complexstats import (
    LoadProfile, build_cr_matrix, empirical_correlation, nearest_pd_correlation, split_complex,
)


def residential_shape(hours):
    h = np.asarray(hours) % 24
    return (0.35 + 0.25 * np.exp(-((h - 7.5) / 1.5) ** 2)
            + 0.3 * np.exp(-((h - 13.0) / 3.0) ** 2)
            + 0.6 * np.exp(-((h - 19.0) / 2.2) ** 2))


def industrial_shape(hours):
    h = np.asarray(hours) % 24
    on = 1 / (1 + np.exp(-(h - 7.0) / 0.5))
    off = 1 / (1 + np.exp((h - 17.0) / 0.5))
    return 0.3 + 0.7 * on * off


def solar_shape(hours):
    h = np.asarray(hours) % 24
    return np.clip(np.sin(np.pi * (h - 6.0) / 12.0), 0, None)


SHAPES = {"residential": residential_shape, "industrial": industrial_shape}


@dataclass(frozen=True)
class CommunitySpec:
    n_areas: int = 5
    customers_per_area: int = 10
    # load type per area: one name for all areas or one per area
    base_profile: str | tuple[str, ...] = "residential"
    noise_sd: float = 0.3
    common_component_weight: float = 0.5
    pv_penetration: float = 0.0
    sample_interval_min: float = 1.0
    seed: int = 0
    n_days: int = 2
    shared_ar: float = 0.9          # lag-1 autocorrelation of the shared noise
    idiosyncratic_ar: float = 0.0   # and of each customer's own noise
    cross_type_share: float = 0.0   # fraction of the shared noise common to all load types
    power_factor: float = 0.95
    customer_kw: float = 2.0
    area_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_areas < 1 or self.customers_per_area < 1:
            raise ValueError("need at least one area and one customer per area")
        if not 0 <= self.common_component_weight <= 1:
            raise ValueError("common_component_weight must lie in [0, 1]")
        if not 0 <= self.pv_penetration <= 0.25:
            raise ValueError("pv_penetration must lie in [0, 0.25]")
        if self.noise_sd < 0 or self.sample_interval_min <= 0 or self.n_days <= 0:
            raise ValueError("noise_sd, sample interval and n_days must be positive")
        if not 0 <= self.cross_type_share <= 1:
            raise ValueError("cross_type_share must lie in [0, 1]")
        for ar in (self.shared_ar, self.idiosyncratic_ar):
            if not -1 < ar < 1:
                raise ValueError("autocorrelations must lie in (-1, 1)")
        if not 0 < self.power_factor <= 1:
            raise ValueError("power_factor must lie in (0, 1]")
        for t in self.groups:
            if t not in SHAPES:
                raise ValueError(f"unknown load type {t!r}; choose from {sorted(SHAPES)}")
        if self.area_ids is not None and len(self.area_ids) != self.n_areas:
            raise ValueError("need one area id per area")

    @classmethod
    def from_dict(cls, data: dict) -> "CommunitySpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown community keys {sorted(unknown)}")
        data = dict(data)
        for key in ("base_profile", "area_ids"):
            if isinstance(data.get(key), list):
                data[key] = tuple(data[key])
        return cls(**data)

    @property
    def groups(self) -> tuple[str, ...]:
        if isinstance(self.base_profile, str):
            return (self.base_profile,) * self.n_areas
        if len(self.base_profile) != self.n_areas:
            raise ValueError("base_profile needs one load type per area")
        return tuple(self.base_profile)

    @property
    def n_samples(self) -> int:
        return int(round(self.n_days * 24 * 60 / self.sample_interval_min))


def _ar1(rng, rho, shape):
    """Unit-variance stationary AR(1) series along the last axis."""
    eps = rng.standard_normal(shape)
    if rho == 0:
        return eps
    x0 = rng.standard_normal(shape[:-1] + (1,))
    return lfilter([np.sqrt(1 - rho * rho)], [1, -rho], eps, axis=-1, zi=rho * x0)[0]


def gen_synthetic_profiles(spec: CommunitySpec) -> list[LoadProfile]:
    """Complex power (VA) per area; identical for identical specs."""
    n_t = spec.n_samples
    hours = np.arange(n_t) * spec.sample_interval_min / 60.0
    groups = spec.groups
    kinds = sorted(set(groups))
    ss = np.random.SeedSequence(spec.seed)
    shared_seed, cust_seed, cloud_seed, common_seed = ss.spawn(4)
    shared_rngs = dict(zip(kinds, (np.random.default_rng(s) for s in shared_seed.spawn(len(kinds)))))
    common = _ar1(np.random.default_rng(common_seed), spec.shared_ar, (n_t,))
    c = spec.cross_type_share
    shared = {k: np.sqrt(c) * common + np.sqrt(1 - c) * _ar1(shared_rngs[k], spec.shared_ar, (n_t,))
              for k in kinds}
    cloud = _ar1(np.random.default_rng(cloud_seed), 0.98, (n_t,))
    tan_phi = np.tan(np.arccos(spec.power_factor))
    w = spec.common_component_weight
    ids = spec.area_ids or tuple(f"A{k + 1}" for k in range(spec.n_areas))

    out = []
    for area, (aid, kind, rng) in enumerate(zip(ids, groups, (
            np.random.default_rng(s) for s in cust_seed.spawn(spec.n_areas)))):
        m = spec.customers_per_area
        shape = SHAPES[kind](hours)
        scale = rng.uniform(0.7, 1.3, (m, 1)) * spec.customer_kw * 1e3
        own = _ar1(rng, spec.idiosyncratic_ar, (m, n_t))
        p = scale * shape * (1 + spec.noise_sd * (w * shared[kind] + (1 - w) * own))
        q = tan_phi * p * (1 + 0.1 * rng.standard_normal((m, n_t)))
        if spec.pv_penetration > 0:
            pv = spec.pv_penetration * scale * shape.mean() * 2.0 * solar_shape(hours)
            p = p - pv * np.clip(1 + 0.2 * cloud, 0, None)
        out.append(LoadProfile(aid, p.sum(axis=0) + 1j * q.sum(axis=0), spec.sample_interval_min))
    return out


# settings for the aggregation sweep: noisy customers, a persistent shared
# component and white individual noise
SWEEP_COMMUNITY = dict(n_areas=5, noise_sd=1.0, common_component_weight=0.3, shared_ar=0.9,
                       idiosyncratic_ar=0.0)


def profile_correlations(profiles: Sequence[LoadProfile]) -> tuple[float, float]:
    """Mean pairwise spatial correlation and mean lag-1 autocorrelation of
    the active power of ``profiles``."""
    p = [LoadProfile(x.area_id, x.samples.real, x.interval_min) for x in profiles]
    spatial = [empirical_correlation(a, b) for i, a in enumerate(p) for b in p[i + 1:]]
    lag1 = [empirical_correlation(a, a, 1) for a in p]
    return float(np.mean(spatial)) if spatial else float("nan"), float(np.mean(lag1))


def correlation_sweep(customers=(1, 2, 5, 10, 15, 20, 25), seeds=range(20), **overrides) -> list[dict]:
    """Seed-averaged spatial and lag-1 correlation as areas aggregate more customers."""
    params = {**SWEEP_COMMUNITY, **overrides}
    rows = []
    for c in customers:
        vals = np.array([profile_correlations(gen_synthetic_profiles(
            CommunitySpec(customers_per_area=c, seed=s, **params))) for s in seeds])
        rows.append({"customers": c, "spatial": float(vals[:, 0].mean()),
                     "lag1": float(vals[:, 1].mean())})
    return rows


def mean_offdiag(m: np.ndarray) -> float:
    mask = ~np.eye(m.shape[0], dtype=bool)
    return float(m[mask].mean())


def correlation_from_profiles(profiles: Sequence[LoadProfile], nt: int = 1, voltage: complex = 1.0,
                              repair: bool = True):
    """Correlation matrix of the load currents drawn at ``voltage``."""
    currents = [p.to_current(voltage) for p in profiles]
    cr = build_cr_matrix(*split_complex(currents), nt=nt)
    return nearest_pd_correlation(cr) if repair else cr


# -- csv ----------------------------------------------------------------------------


def write_profiles(profiles: Sequence[LoadProfile], path_p, path_q) -> None:
    """Real parts to ``path_p`` and imaginary parts to ``path_q``; one column
    per area, one row per sample."""
    for path, part in ((path_p, np.real), (path_q, np.imag)):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([p.area_id for p in profiles])
            cols = np.array([part(p.samples) for p in profiles]).T
            w.writerows([[repr(float(v)) for v in row] for row in cols])


def read_profiles(path_p, path_q=None, interval_min: float = 1.0) -> list[LoadProfile]:
    def load(path):
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 3:
            raise ValueError(f"{path}: need a header and at least two samples")
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None
        return rows[0], data

    ids, re = load(path_p)
    im = np.zeros_like(re)
    if path_q is not None:
        ids_q, im = load(path_q)
        if ids_q != ids or im.shape != re.shape:
            raise ValueError("real and imaginary profile files do not line up")
    return [LoadProfile(a, re[:, k] + 1j * im[:, k], interval_min) for k, a in enumerate(ids)]
