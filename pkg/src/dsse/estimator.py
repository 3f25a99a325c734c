"""Single-pass state estimator over stacked load currents.

The latent vector is ``z = [i_inj over the window; vref over the window]``.
Its prior comes from pseudo measurements and a spatial-temporal correlation
matrix (the offline part), is conditioned once on every real measurement in
the window, and is then pushed through the direct load flow

    [i_inj; i_branch; v] = T z,   T = [[I, 0], [BIBC, 0], [-DLF, E]]

(block-diagonal over time steps, ``E`` copies each step's reference voltage
onto its buses). The state vector is section-major: all injections (oldest
step first), then all branch currents, then all bus voltages.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from dsse import cmcgd
from dsse.complexstats import (
    ComplexGaussian, CorrelationMatrix, assemble_complex_covariance, sd_from_error,
)
from dsse.netmodel import FlowMatrices, RadialNetwork, build_flow_matrices, expand_vref

KINDS = ("injected_current", "branch_current", "bus_voltage")
MODES = ("cs", "cst")
DEFAULT_NT = 3


class ObservabilityError(ValueError):
    """Not enough information to pin down every state."""


# -- measurements --------------------------------------------------------------------


@dataclass(frozen=True)
class Measurement:
    """One value on one state. Branches are named by their downstream bus."""

    kind: str
    target: str
    value: complex
    epsilon: float
    phase: int = 0
    step: int = 0
    real: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown measurement kind {self.kind!r}; expected one of {KINDS}")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValueError(f"measurement on {self.target!r}: epsilon must be >= 0")
        if self.step < 0 or self.phase < 0:
            raise ValueError(f"measurement on {self.target!r}: negative step or phase")
        object.__setattr__(self, "target", str(self.target))
        object.__setattr__(self, "value", complex(self.value))

    @property
    def key(self):
        return (self.kind, self.target, self.phase, self.step, self.real)


@dataclass(frozen=True)
class MeasurementSet:
    """Pseudo and real measurements over consecutive time steps.

    ``vref`` holds the reference-bus voltage per step, one value per phase
    (a single value is broadcast to all phases).
    """

    entries: tuple[Measurement, ...]
    vref: np.ndarray
    vref_epsilon: float = 3.0

    def __post_init__(self):
        entries = tuple(self.entries)
        seen = set()
        for m in entries:
            if m.key in seen:
                raise ValueError(f"duplicate {'real' if m.real else 'pseudo'} {m.kind} "
                                 f"on {m.target!r} phase {m.phase} step {m.step}")
            seen.add(m.key)
            if not m.real and m.kind != "injected_current":
                raise ValueError(f"pseudo measurement on {m.target!r} must be an injected current")
        vref = np.asarray(self.vref, dtype=complex)
        if vref.ndim == 1:
            vref = vref[:, None]
        if vref.ndim != 2 or vref.shape[0] < 1:
            raise ValueError("vref must hold at least one step")
        if any(m.step >= vref.shape[0] for m in entries):
            raise ValueError("measurement step beyond the reference-voltage series")
        if self.vref_epsilon < 0:
            raise ValueError("vref_epsilon must be >= 0")
        vref.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "vref", vref)

    @property
    def n_steps(self) -> int:
        return self.vref.shape[0]

    def select(self, real: bool | None = None, steps: Iterable[int] | None = None) -> list[Measurement]:
        steps = None if steps is None else set(steps)
        return [m for m in self.entries
                if (real is None or m.real == real) and (steps is None or m.step in steps)]

    def merged(self, other: "MeasurementSet") -> "MeasurementSet":
        """Entries of both sets, reference voltages of this one."""
        return MeasurementSet(self.entries + other.entries, self.vref, self.vref_epsilon)

    def to_dict(self) -> dict:
        return {
            "vref": [[[v.real, v.imag] for v in row] for row in self.vref],
            "vref_epsilon": self.vref_epsilon,
            "measurements": [
                {"kind": m.kind, "target": m.target, "phase": m.phase, "step": m.step,
                 "value": [m.value.real, m.value.imag], "epsilon": m.epsilon, "real": m.real}
                for m in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MeasurementSet":
        try:
            vref = np.array([[complex(*v) for v in row] for row in data["vref"]])
            entries = tuple(
                Measurement(kind=d["kind"], target=d["target"], value=complex(*d["value"]),
                            epsilon=float(d["epsilon"]), phase=int(d.get("phase", 0)),
                            step=int(d.get("step", 0)), real=bool(d.get("real", True)))
                for d in data["measurements"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed measurement set: {exc}") from None
        return cls(entries, vref, float(data.get("vref_epsilon", 3.0)))

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def read(cls, path) -> "MeasurementSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _state_position(net: RadialNetwork, m: Measurement) -> int:
    try:
        return net.state_index(m.target, m.phase)
    except KeyError as exc:
        raise ValueError(f"{m.kind} measurement: {exc.args[0]}") from None


# -- angle handling for pseudo currents ----------------------------------------------


def align_pseudo_angles(fm: FlowMatrices, local, vref, method: str = "powerflow",
                        tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Rotate load currents given relative to their own bus voltage into the
    common frame of the reference bus.

    ``"powerflow"`` uses bus angles from a load flow of the rotated currents
    (solved by fixed-point iteration), ``"reference"`` the reference-bus
    angle of each phase, ``"none"`` leaves the values untouched.
    """
    local = np.asarray(local, dtype=complex)
    v0 = expand_vref(vref, fm.n_states, fm.phase_count)
    if method == "none":
        return local.copy()
    theta = np.angle(v0)
    if method == "reference":
        return local * np.exp(1j * theta)
    if method != "powerflow":
        raise ValueError(f"unknown angle reference {method!r}")
    for _ in range(max_iter):
        i = local * np.exp(1j * theta)
        new = np.angle(v0 - fm.dlf @ i)
        if np.max(np.abs(np.angle(np.exp(1j * (new - theta)))), initial=0) < tol:
            theta = new
            break
        theta = new
    return local * np.exp(1j * theta)


# -- prior ---------------------------------------------------------------------------


def _window(ms: MeasurementSet, nt: int, step: int | None) -> list[int]:
    step = ms.n_steps - 1 if step is None else int(step)
    if not 0 <= step < ms.n_steps:
        raise ValueError(f"step {step} outside the measurement set (0..{ms.n_steps - 1})")
    if not 1 <= nt <= 10:
        raise ValueError("nt must be between 1 and 10")
    if step - nt + 1 < 0:
        raise ValueError(f"a window of {nt} steps ending at step {step} needs earlier data")
    return list(range(step - nt + 1, step + 1))


def _cr_for(net: RadialNetwork, cr: CorrelationMatrix, nt: int) -> CorrelationMatrix:
    if cr.nt < nt:
        raise ValueError(f"correlation matrix covers {cr.nt} slots, estimator needs {nt}")
    if cr.labels is not None:
        cr = cr.reorder(net.state_labels(), fill_missing=True)
    elif cr.n_vars != net.n_states:
        raise ValueError(f"correlation matrix has {cr.n_vars} variables, network has {net.n_states} states")
    return cr.last_slots(nt)


def _pseudo_means(net: RadialNetwork, pseudo: MeasurementSet, steps):
    n = net.n_states
    mean = np.zeros((len(steps), n), dtype=complex)
    eps = np.zeros((len(steps), n))
    have = np.zeros((len(steps), n), dtype=bool)
    slot = {s: k for k, s in enumerate(steps)}
    for m in pseudo.select(real=False, steps=steps):
        k = _state_position(net, m)
        mean[slot[m.step], k] = m.value
        eps[slot[m.step], k] = m.epsilon
        have[slot[m.step], k] = True
    if not have.all():
        s, k = np.argwhere(~have)[0]
        label = net.state_labels()[k]
        raise ObservabilityError(f"no pseudo measurement for injection at {label!r}, step {steps[s]}")
    return mean, eps


def build_prior(net: RadialNetwork, pseudo: MeasurementSet, cr: CorrelationMatrix, nt: int = 1,
                step: int | None = None, angle_reference: str = "powerflow",
                fm: FlowMatrices | None = None) -> ComplexGaussian:
    """Prior over the stacked load currents of the ``nt`` steps ending at
    ``step`` (oldest first).

    Pseudo values are read as currents relative to their bus voltage and
    rotated into the reference frame according to ``angle_reference``.
    Depends only on historical data, so it can be prepared offline.
    """
    fm = build_flow_matrices(net) if fm is None else fm
    steps = _window(pseudo, nt, step)
    local, eps = _pseudo_means(net, pseudo, steps)
    mean = np.stack([
        align_pseudo_angles(fm, local[k], pseudo.vref[s], angle_reference)
        for k, s in enumerate(steps)])
    gamma, c = local_frame_covariance(local.ravel(), mean.ravel(), eps.ravel(),
                                      _cr_for(net, cr, nt))
    return ComplexGaussian(mean.ravel(), gamma, c)


def local_frame_covariance(local, aligned, eps, cr: CorrelationMatrix):
    """Covariance of pseudo currents whose errors and correlation are given
    relative to each bus voltage, expressed in the reference frame.

    The correlation describes real and imaginary parts in the local frame;
    each variable is then rotated by the same angle as its mean
    (``Gamma -> R Gamma R^H``, ``C -> R C R^T``).
    """
    local = np.asarray(local, dtype=complex)
    aligned = np.asarray(aligned, dtype=complex)
    gamma, c = assemble_complex_covariance(sd_from_error(local, eps), cr)
    rot = np.ones(local.size, dtype=complex)
    nz = local != 0
    rot[nz] = aligned[nz] / local[nz]
    rot /= np.abs(rot)
    return rot[:, None] * gamma * rot.conj()[None, :], rot[:, None] * c * rot[None, :]


def _scalar_noise(values, epsilons) -> ComplexGaussian:
    """Independent noise with a per-entry error band around each value."""
    sd = sd_from_error(np.asarray(values, dtype=complex), np.asarray(epsilons, dtype=float))
    vr, vi = sd.real ** 2, sd.imag ** 2
    return ComplexGaussian(np.zeros(sd.size), np.diag(vr + vi), np.diag(vr - vi))


def vref_model(vref, epsilon: float) -> ComplexGaussian:
    """Independent Gaussian over stacked per-step, per-phase reference voltages."""
    v = np.asarray(vref, dtype=complex).ravel()
    noise = _scalar_noise(v, np.full(v.size, epsilon))
    return ComplexGaussian(v, noise.gamma, noise.c)


# -- propagation ---------------------------------------------------------------------


def state_transform(fm: FlowMatrices, nt: int) -> np.ndarray:
    """``T`` mapping ``[i_inj; vref]`` (stacked over ``nt`` steps) to
    ``[i_inj; i_branch; v]``."""
    n, p = fm.n_states, fm.phase_count
    t = np.zeros((3 * nt * n, nt * (n + p)), dtype=complex)
    rows = np.arange(nt * n)
    t[rows, rows] = 1.0
    for s in range(nt):
        cols = slice(s * n, (s + 1) * n)
        t[nt * n + s * n:nt * n + (s + 1) * n, cols] = fm.bibc
        t[2 * nt * n + s * n:2 * nt * n + (s + 1) * n, cols] = -fm.dlf
    # every voltage row picks up the reference voltage of its step and phase
    t[2 * nt * n + rows, nt * n + (rows // n) * p + (rows % n) % p] = 1.0
    return t


@dataclass(frozen=True)
class StateEstimate:
    """Posterior over ``[i_inj; i_branch; v]`` for every window slot.

    The full IBV covariance is formed from the latent posterior only when
    first accessed; means and per-state variances are always available.
    """
    mu_ibv: np.ndarray
    gamma_diag: np.ndarray      # real diagonal of the IBV covariance
    c_diag: np.ndarray          # diagonal of the IBV pseudo-covariance
    var_mag: np.ndarray
    var_ang: np.ndarray
    mode: str
    nt: int
    n_states: int
    phase_count: int = 1
    steps: tuple[int, ...] = ()
    iterations: int = 1
    labels: tuple[str, ...] | None = field(default=None, compare=False)
    latent: ComplexGaussian | None = field(default=None, compare=False, repr=False)
    transform: np.ndarray | None = field(default=None, compare=False, repr=False)

    def section(self, kind: str, slot: int = -1) -> np.ndarray:
        """Indices of one section (``kind``) at one window slot (-1 = current)."""
        sec = KINDS.index(kind)
        slot = slot % self.nt
        start = sec * self.nt * self.n_states + slot * self.n_states
        return np.arange(start, start + self.n_states)

    def mean(self, kind: str, slot: int = -1) -> np.ndarray:
        return self.mu_ibv[self.section(kind, slot)]

    def model(self, kind: str, slot: int = -1) -> ComplexGaussian:
        idx = self.section(kind, slot)
        sub = self.latent.linear_map(self.transform[idx])
        return ComplexGaussian(self.mu_ibv[idx], (sub.gamma + sub.gamma.conj().T) / 2,
                               (sub.c + sub.c.T) / 2)

    @property
    def voltages(self) -> np.ndarray:
        return self.mean("bus_voltage")

    @cached_property
    def _full(self) -> ComplexGaussian:
        ibv = self.latent.linear_map(self.transform)
        return ComplexGaussian(self.mu_ibv, (ibv.gamma + ibv.gamma.conj().T) / 2,
                               (ibv.c + ibv.c.T) / 2)

    @property
    def gamma_ibv(self) -> np.ndarray:
        return self._full.gamma

    @property
    def c_ibv(self) -> np.ndarray:
        return self._full.c

    @property
    def posterior(self) -> ComplexGaussian:
        return self._full


def _as_latent(model: ComplexGaussian, fm: FlowMatrices, vref, nt: int, vref_epsilon: float):
    n, p = fm.n_states, fm.phase_count
    if model.dim == nt * (n + p):
        return model
    if model.dim != nt * n:
        raise ValueError(f"model has dimension {model.dim}; expected {nt * n} "
                         f"(injections) or {nt * (n + p)} (with reference voltages)")
    v = np.asarray(vref, dtype=complex).reshape(nt, -1)
    v = np.stack([expand_vref(row, p, p) for row in v])
    return ComplexGaussian.independent(model, vref_model(v, vref_epsilon))


def propagate_states(model: ComplexGaussian, fm: FlowMatrices, vref, nt: int = 1,
                     vref_epsilon: float = 3.0, mode: str = "cs",
                     labels=None, steps=(), iterations: int = 1,
                     t: np.ndarray | None = None) -> StateEstimate:
    """Push a Gaussian over stacked injections (optionally followed by the
    per-step reference voltages) through the direct load flow. ``t`` is
    :func:`state_transform` for ``nt`` when already at hand."""
    z = _as_latent(model, fm, vref, nt, vref_epsilon)
    t = state_transform(fm, nt) if t is None else t
    mean = t @ z.mean
    # T is block diagonal over window slots, so the variances only need the
    # per-slot blocks of the latent covariance
    n, p = fm.n_states, fm.phase_count
    # (the injection rows are the identity: their variances are read directly)
    first = np.concatenate([nt * n + np.arange(n), 2 * nt * n + np.arange(n)])
    t1 = t[np.ix_(first, np.concatenate([np.arange(n), nt * n + np.arange(p)]))]
    g_diag = np.zeros(3 * nt * n)
    c_diag = np.zeros(3 * nt * n, dtype=complex)
    g_diag[:nt * n] = np.diagonal(z.gamma)[:nt * n].real
    c_diag[:nt * n] = np.diagonal(z.c)[:nt * n]
    for s in range(nt):
        lat = np.concatenate([s * n + np.arange(n), nt * n + s * p + np.arange(p)])
        g = t1 @ z.gamma[np.ix_(lat, lat)]
        c = t1 @ z.c[np.ix_(lat, lat)]
        out = (np.arange(1, 3)[:, None] * nt * n + s * n + np.arange(n)).ravel()
        g_diag[out] = np.einsum("ij,ij->i", g, t1.conj()).real
        c_diag[out] = np.einsum("ij,ij->i", c, t1)
    var_mag, var_ang = _mag_ang(mean, g_diag, c_diag, labels, nt)
    return StateEstimate(mean, g_diag, c_diag, var_mag, var_ang, mode, nt, n,
                         p, tuple(steps), iterations,
                         None if labels is None else tuple(labels), z, t)


# -- variances and quality -----------------------------------------------------------


def _mag_ang(mean, gamma_diag, c_diag, labels=None, nt=1):
    k_rr = 0.5 * (gamma_diag + c_diag.real)
    k_ii = 0.5 * (gamma_diag - c_diag.real)
    k_ri = 0.5 * c_diag.imag
    x, y = mean.real, mean.imag
    r2 = x * x + y * y
    spread = np.abs(k_rr) + np.abs(k_ii) + np.abs(k_ri)
    bad = (r2 == 0) & (spread > 0)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        name = f"state {k}"
        if labels is not None:
            n = len(labels)
            sec, rem = divmod(k, n * nt)
            name = f"{KINDS[sec]} at {labels[rem % n]!r}"
        raise ValueError(f"{name} has zero mean and nonzero variance; angle variance undefined")
    safe = np.where(r2 == 0, 1.0, r2)
    var_mag = (x * x * k_rr + 2 * x * y * k_ri + y * y * k_ii) / safe
    var_ang = (y * y * k_rr - 2 * x * y * k_ri + x * x * k_ii) / safe ** 2
    var_mag = np.where(r2 == 0, 0.0, np.clip(var_mag, 0, None))
    var_ang = np.where(r2 == 0, 0.0, np.clip(var_ang, 0, None))
    return var_mag, var_ang


def magnitude_angle_variance(est) -> tuple[np.ndarray, np.ndarray]:
    """Delta-method variances of magnitude and angle for every state.

    Accepts a :class:`StateEstimate` or a :class:`ComplexGaussian`. Per
    state with ``x = [Re, Im]`` and 2x2 composite block ``K``:
    ``var|X| = x'Kx / |x|^2`` and ``var angle(X) = x_perp' K x_perp / |x|^4``.
    """
    if isinstance(est, StateEstimate):
        return _mag_ang(est.mu_ibv, est.gamma_diag, est.c_diag)
    return _mag_ang(np.asarray(est.mean), np.real(np.diag(est.gamma)), np.diag(est.c))


def quality(est: StateEstimate, scope: str = "voltage", base: float | None = None,
            slot: int = -1) -> float:
    """``ln(1 / trace)`` of the composite covariance of the chosen states.

    ``scope`` is ``"voltage"`` (bus voltages of one window slot) or ``"all"``.
    With ``base`` the states are first expressed in per unit. Returns
    ``inf`` when the trace is zero.
    """
    if scope == "voltage":
        idx = est.section("bus_voltage", slot)
    elif scope == "all":
        idx = np.arange(est.mu_ibv.size)
    else:
        raise ValueError(f"unknown quality scope {scope!r}")
    # trace of the real composite block equals trace(Gamma)
    tr = float(np.sum(est.gamma_diag[idx]))
    if base is not None:
        tr /= base ** 2
    if tr <= 0:
        return float("inf")
    return float(np.log(1.0 / tr))


# -- estimator -----------------------------------------------------------------------


def _measurement_rows(net: RadialNetwork, real: Sequence[Measurement], steps, nt: int):
    n = net.n_states
    slot = {s: k for k, s in enumerate(steps)}
    rows = []
    for m in real:
        sec = KINDS.index(m.kind)
        rows.append(sec * nt * n + slot[m.step] * n + _state_position(net, m))
    return np.array(rows, dtype=int)


def estimate(net: RadialNetwork, cr: CorrelationMatrix, pseudo: MeasurementSet,
             real: MeasurementSet | None = None, mode: str = "cst", nt: int = DEFAULT_NT,
             step: int | None = None, angle_reference: str = "powerflow",
             fm: FlowMatrices | None = None, prior: ComplexGaussian | None = None) -> StateEstimate:
    """Estimate every state at ``step`` (default: the last step).

    ``mode="cs"`` uses spatial correlation only (``nt`` forced to 1);
    ``mode="cst"`` conditions jointly on the real measurements of the last
    ``nt`` steps. Real measurements are taken from ``real`` if given,
    otherwise from the real entries of ``pseudo``. A precomputed ``prior``
    (from :func:`build_prior`) may be passed to skip the offline part.
    """
    mode = mode.lower()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "cs":
        nt = 1
    fm = build_flow_matrices(net) if fm is None else fm
    steps = _window(pseudo, nt, step)
    if prior is None:
        prior = build_prior(net, pseudo, cr, nt, steps[-1], angle_reference, fm)
    elif prior.dim != nt * net.n_states:
        raise ValueError(f"prior has dimension {prior.dim}, window needs {nt * net.n_states}")
    vref = pseudo.vref[steps]
    latent = _as_latent(prior, fm, vref, nt, pseudo.vref_epsilon)
    source = pseudo if real is None else real
    meas = source.select(real=True, steps=steps)
    t = state_transform(fm, nt)
    if meas:
        rows = _measurement_rows(net, meas, steps, nt)
        noise = _scalar_noise([m.value for m in meas], [m.epsilon for m in meas])
        latent = cmcgd.condition_linear(latent, t[rows], [m.value for m in meas], noise)
    return propagate_states(latent, fm, vref, nt, pseudo.vref_epsilon, mode,
                            net.state_labels(), steps, 1, t)


# -- export --------------------------------------------------------------------------


def estimate_rows(est: StateEstimate, net: RadialNetwork, slot: int = -1) -> list[dict]:
    p = net.phase_count
    rows = []
    for kind in KINDS:
        idx = est.section(kind, slot)
        for k, i in enumerate(idx):
            bus = net.order[k // p]
            rows.append({
                "kind": kind, "id": bus, "phase": "abc"[k % p] if p == 3 else "a",
                "step": est.steps[slot] if est.steps else slot % est.nt,
                "mean_re": float(est.mu_ibv[i].real), "mean_im": float(est.mu_ibv[i].imag),
                "var_mag": float(est.var_mag[i]), "var_ang": float(est.var_ang[i]),
            })
    return rows


def write_estimate_csv(est: StateEstimate, net: RadialNetwork, path, slot: int = -1) -> None:
    rows = estimate_rows(est, net, slot)
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def write_estimate_json(est: StateEstimate, net: RadialNetwork, path, full: bool = False) -> None:
    """Per-state summary; the full posterior matrices only with ``full``."""
    out = {"mode": est.mode, "nt": est.nt, "steps": list(est.steps),
           "iterations": est.iterations, "states": estimate_rows(est, net)}
    if full:
        out["mu_ibv"] = [[z.real, z.imag] for z in est.mu_ibv]
        for name in ("gamma_ibv", "c_ibv"):
            m = getattr(est, name)
            out[name] = {"re": m.real.tolist(), "im": m.imag.tolist()}
    Path(path).write_text(json.dumps(out))
