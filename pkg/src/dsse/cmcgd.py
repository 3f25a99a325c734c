"""Conditioning of improper complex Gaussians on observed entries.

The normative computation works on the real composite vector
``[Re z; Im z]``: for measured block ``m`` and unmeasured block ``u``

    mean_u' = mean_u + K_um K_mm^-1 (y - mean_m)
    K_uu'   = K_uu - K_um K_mm^-1 K_mu

Only the blocks touching the measured entries are formed on the composite.
With ``K_mm = L L^T`` and ``W = K_um L^-T`` the update is ``K_uu - W W^T``;
writing ``F = W_re + j W_im`` (rows of W for Re u and Im u) gives it in
complex form as ``Gamma_uu - F F^H`` and ``C_uu - F F^T``, so the composite
of the unmeasured block is never built.

The widely linear closed form,

    mu_2' = mu_2 + A (y - mu_1) + B (y - mu_1)^*
    A = (G21 - C21 conj(G11)^-1 conj(C11)) conj(L)^-1
    B = (C21 - G21 G11^-1 C11) L^-1
    L = conj(G11) - C11^H G11^-1 C11

(block 1 measured, block 2 unmeasured) is provided for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from dsse.complexstats import ComplexGaussian, real_composite_from_complex


class DegenerateMeasurementError(ValueError):
    """The measured block has a (numerically) singular covariance."""


PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class Partition:
    measured_idx: tuple[int, ...]
    unmeasured_idx: tuple[int, ...]

    def __post_init__(self):
        m = tuple(int(i) for i in self.measured_idx)
        u = tuple(int(i) for i in self.unmeasured_idx)
        if len(set(m)) != len(m) or len(set(u)) != len(u):
            raise ValueError("partition indices contain duplicates")
        if set(m) & set(u):
            raise ValueError("measured and unmeasured indices overlap")
        object.__setattr__(self, "measured_idx", m)
        object.__setattr__(self, "unmeasured_idx", u)

    @classmethod
    def from_measured(cls, measured: Sequence[int], dim: int) -> "Partition":
        measured = [int(i) for i in measured]
        chosen = set(measured)
        return cls(tuple(measured), tuple(i for i in range(dim) if i not in chosen))

    def check(self, dim: int) -> None:
        if sorted(self.measured_idx + self.unmeasured_idx) != list(range(dim)):
            raise ValueError(f"partition does not cover a vector of length {dim}")


@dataclass(frozen=True)
class ConditioningGains:
    a: np.ndarray
    b: np.ndarray
    lam: np.ndarray


def _factor_measured(k_mm: np.ndarray):
    """Cholesky factor of the measured-block covariance, refusing tiny pivots."""
    d = np.diag(k_mm)
    if k_mm.size == 0:
        return None
    if np.any(d <= 0):
        raise DegenerateMeasurementError("a measured variable has zero variance")
    try:
        chol = linalg.cholesky(k_mm, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise DegenerateMeasurementError(
            "measured-block covariance is singular (redundant or degenerate measurements)") from None
    if np.any(np.diag(chol) ** 2 < PIVOT_RTOL * d):
        raise DegenerateMeasurementError(
            "measured-block covariance is singular (redundant or degenerate measurements)")
    return chol


def _real_gain(g_mm, c_mm, g_um, c_um):
    """``K_um K_mm^-1`` on the real composite; only the blocks touching the
    measured entries are formed."""
    chol = _factor_measured(real_composite_from_complex(g_mm, c_mm).composite())
    if chol is None:
        return np.zeros((2 * g_um.shape[0], 0))
    k_um = real_composite_from_complex(g_um, c_um).composite()
    return linalg.cho_solve((chol, True), k_um.T, check_finite=False).T


def _split_gain(g, nu, nm):
    """Widely linear ``A``, ``B`` equivalent to the real gain ``g``."""
    g11, g12 = g[:nu, :nm], g[:nu, nm:]
    g21, g22 = g[nu:, :nm], g[nu:, nm:]
    a = 0.5 * (g11 + g22 + 1j * (g21 - g12))
    b = 0.5 * (g11 - g22 + 1j * (g21 + g12))
    return a, b


def _indices(model, part):
    part.check(model.dim)
    return (np.asarray(part.measured_idx, dtype=int), np.asarray(part.unmeasured_idx, dtype=int))


def _posterior(mean_u, g_uu, c_uu, g_mu, c_mu, g_mm, c_mm, innov) -> ComplexGaussian:
    """One conditioning pass from the covariance blocks of a partitioned
    joint (``u`` unmeasured, ``m`` measured) and the innovation ``y - mean_m``."""
    nu = mean_u.size
    chol = _factor_measured(real_composite_from_complex(g_mm, c_mm).composite())
    if chol is None:
        return ComplexGaussian(mean_u.copy(), g_uu.copy(), c_uu.copy())
    k_mu = real_composite_from_complex(g_mu, c_mu).composite()
    # W^T = L^-1 K_mu; the gain is W L^-1
    wt = linalg.solve_triangular(chol, k_mu, lower=True, check_finite=False)
    white = linalg.solve_triangular(chol, np.concatenate([innov.real, innov.imag]), lower=True,
                                    check_finite=False)
    shift = white @ wt
    f = (wt[:, :nu] + 1j * wt[:, nu:]).T
    gamma = g_uu - f @ f.conj().T
    c = c_uu - f @ f.T
    return ComplexGaussian(mean_u + shift[:nu] + 1j * shift[nu:], gamma, c)


def condition(model: ComplexGaussian, part: Partition, observed) -> ComplexGaussian:
    """Distribution of the unmeasured block given exact observations of the
    measured block."""
    y = np.atleast_1d(np.asarray(observed, dtype=complex))
    if y.size != len(part.measured_idx):
        raise ValueError(f"{y.size} observations for {len(part.measured_idx)} measured entries")
    m, u = _indices(model, part)
    g, c = model.gamma, model.c
    return _posterior(model.mean[u], g[np.ix_(u, u)], c[np.ix_(u, u)], g[np.ix_(m, u)],
                      c[np.ix_(m, u)], g[np.ix_(m, m)], c[np.ix_(m, m)], y - model.mean[m])


def conditioning_gains(model: ComplexGaussian, part: Partition) -> ConditioningGains:
    """Widely linear gains ``A``, ``B`` read off the real conditional-mean
    operator, plus the Schur complement ``L`` of the measured block."""
    m, u = _indices(model, part)
    nm = m.size
    g, c = model.gamma, model.c
    gain = _real_gain(g[np.ix_(m, m)], c[np.ix_(m, m)], g[np.ix_(u, m)], c[np.ix_(u, m)])
    a, b = _split_gain(gain, u.size, nm)
    g_mm = model.gamma[np.ix_(m, m)]
    c_mm = model.c[np.ix_(m, m)]
    lam = g_mm.conj() - c_mm.conj().T @ np.linalg.solve(g_mm, c_mm) if nm else g_mm
    return ConditioningGains(a, b, lam)


def closed_form_gains(model: ComplexGaussian, part: Partition) -> ConditioningGains:
    """Gains from the complex closed form (independent of the real route)."""
    part.check(model.dim)
    m = np.asarray(part.measured_idx, dtype=int)
    u = np.asarray(part.unmeasured_idx, dtype=int)
    g11 = model.gamma[np.ix_(m, m)]
    c11 = model.c[np.ix_(m, m)]
    g21 = model.gamma[np.ix_(u, m)]
    c21 = model.c[np.ix_(u, m)]
    lam = g11.conj() - c11.conj().T @ np.linalg.solve(g11, c11)
    b = np.linalg.solve(lam.T, (c21 - g21 @ np.linalg.solve(g11, c11)).T).T
    a_num = g21 - c21 @ np.linalg.solve(g11.conj(), c11.conj())
    a = np.linalg.solve(lam.conj().T, a_num.T).T
    return ConditioningGains(a, b, lam)


def condition_closed_form(model: ComplexGaussian, part: Partition, observed) -> ComplexGaussian:
    """Posterior from the complex closed form; agrees with :func:`condition`."""
    gains = closed_form_gains(model, part)
    m = np.asarray(part.measured_idx, dtype=int)
    u = np.asarray(part.unmeasured_idx, dtype=int)
    innov = np.asarray(observed, dtype=complex) - model.mean[m]
    g12 = model.gamma[np.ix_(m, u)]
    c12 = model.c[np.ix_(m, u)]
    mean = model.mean[u] + gains.a @ innov + gains.b @ innov.conj()
    gamma = model.gamma[np.ix_(u, u)] - gains.a @ g12 - gains.b @ c12.conj()
    c = model.c[np.ix_(u, u)] - gains.a @ c12 - gains.b @ g12.conj()
    return ComplexGaussian(mean, (gamma + gamma.conj().T) / 2, (c + c.T) / 2)


def condition_temporal(model_nt: ComplexGaussian, window, nt: int) -> ComplexGaussian:
    """Condition a model stacked over ``nt`` time slots on every measurement
    in the window at once.

    ``window`` holds one ``(measured_idx, observed)`` pair per slot, oldest
    first, with indices local to a slot; ``measured_idx`` may also be a
    :class:`Partition` of the slot.
    """
    if nt < 1 or model_nt.dim % nt:
        raise ValueError(f"model of dimension {model_nt.dim} cannot be split into {nt} slots")
    if len(window) != nt:
        raise ValueError(f"window has {len(window)} slots, expected {nt}")
    n_step = model_nt.dim // nt
    measured, values = [], []
    for slot, (idx, obs) in enumerate(window):
        if isinstance(idx, Partition):
            idx = idx.measured_idx
        idx = [int(i) for i in idx]
        obs = np.atleast_1d(np.asarray(obs, dtype=complex))
        if len(idx) != obs.size:
            raise ValueError(f"slot {slot}: {obs.size} observations for {len(idx)} indices")
        if any(not 0 <= i < n_step for i in idx):
            raise ValueError(f"slot {slot}: index outside 0..{n_step - 1}")
        measured.extend(slot * n_step + i for i in idx)
        values.append(obs)
    obs_all = np.concatenate(values) if values else np.zeros(0, dtype=complex)
    return condition(model_nt, Partition.from_measured(measured, model_nt.dim), obs_all)


def condition_linear(model: ComplexGaussian, t: np.ndarray, observed,
                     noise: ComplexGaussian | None = None) -> ComplexGaussian:
    """Posterior of ``z`` given ``y = t @ z + noise`` in one conditioning pass.

    Equivalent to :func:`condition` on the joint of ``(z, y)`` with ``y``
    measured; the joint is described by its blocks instead of being formed.
    """
    t = np.atleast_2d(np.asarray(t, dtype=complex))
    n, k = model.dim, t.shape[0]
    if t.shape[1] != n:
        raise ValueError(f"observation matrix has {t.shape[1]} columns, model has {n} entries")
    y = np.atleast_1d(np.asarray(observed, dtype=complex))
    if y.size != k:
        raise ValueError(f"{y.size} observations for {k} rows")
    # blocks of the joint of (z, y); z is the unmeasured part
    g_yz = t @ model.gamma
    c_yz = t @ model.c
    g_yy = g_yz @ t.conj().T
    c_yy = c_yz @ t.T
    mean_y = t @ model.mean
    if noise is not None:
        if noise.dim != k:
            raise ValueError("noise dimension does not match the observation count")
        g_yy, c_yy, mean_y = g_yy + noise.gamma, c_yy + noise.c, mean_y + noise.mean
    return _posterior(model.mean, model.gamma, model.c, g_yz, c_yz, g_yy, c_yy, y - mean_y)
