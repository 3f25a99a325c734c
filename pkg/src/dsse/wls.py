"""Iterative weighted least squares baseline.

States are polar bus voltages (magnitude in per unit of the network base
voltage, angle in radians) at every bus including the reference. All
measurement functions are linear in the complex voltages:

    load current at bus k      -(Y V)_k
    branch current into bus k  Y_b (V_parent - V_k)
    bus voltage                V_k

and enter the objective as real and imaginary parts. Gauss-Newton from a
flat start, each step solved by QR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from dsse.complexstats import (
    CorrelationMatrix, real_composite_from_complex, sd_from_error,
)
from dsse.estimator import (
    MeasurementSet, ObservabilityError, align_pseudo_angles, local_frame_covariance, _cr_for,
    _state_position,
)
from dsse.netmodel import RadialNetwork, admittance_matrix, build_flow_matrices, expand_vref


@dataclass(frozen=True)
class WlsOptions:
    tol: float = 1e-6
    max_iterations: int = 50
    cr: CorrelationMatrix | None = None  # spatial correlation of pseudo data; None = diagonal W
    angle_reference: str = "powerflow"
    step: int | None = None
    variance_floor: float = 1e-8


@dataclass(frozen=True)
class WlsResult:
    vm: np.ndarray            # per unit, reference bus first then state order
    va: np.ndarray            # radians
    iterations: int
    converged: bool
    residual_norm: float      # sqrt(r' W r) at the final state
    step_norm: float          # max |dx| of the last update
    base_voltage: float
    voltage_cov: np.ndarray = field(repr=False, default=None)  # composite [Re; Im], non-reference buses

    @property
    def voltages(self) -> np.ndarray:
        """Complex voltages of the non-reference buses, in state order."""
        return self.all_voltages[self.n_ref:]

    @property
    def all_voltages(self) -> np.ndarray:
        return self.vm * self.base_voltage * np.exp(1j * self.va)

    @property
    def n_ref(self) -> int:
        return self.vm.size - self.voltage_cov.shape[0] // 2

    def quality(self, base: float | None = None) -> float:
        tr = float(np.trace(self.voltage_cov))
        if base is not None:
            tr /= base ** 2
        return float("inf") if tr <= 0 else float(np.log(1.0 / tr))


def _rows(net: RadialNetwork, y_full, meas):
    """Complex measurement matrix ``M`` (h = M V) over reference + state buses."""
    p = net.phase_count
    n_all = y_full.shape[0]
    m = np.zeros((len(meas), n_all), dtype=complex)
    for r, ms in enumerate(meas):
        k = _state_position(net, ms) + p
        if ms.kind == "injected_current":
            m[r] = -y_full[k]
        elif ms.kind == "bus_voltage":
            m[r, k] = 1.0
        else:
            br = net.upstream_branch[ms.target]
            yb = np.linalg.inv(br.impedance)
            par = 0 if br.from_bus == net.reference_bus else (net.index[br.from_bus] + 1) * p
            own = (net.index[ms.target] + 1) * p
            m[r, par:par + p] += yb[ms.phase]
            m[r, own:own + p] -= yb[ms.phase]
    return m


def _floor(var, rel):
    """Small diagonal loading that keeps the covariance invertible even for
    exactly correlated or zero-variance entries."""
    top = float(var.max(initial=0.0))
    return rel * var + (rel * top if top > 0 else rel)


def wls_estimate(net: RadialNetwork, measurements: MeasurementSet,
                 options: WlsOptions | None = None) -> WlsResult:
    """Weighted least squares on one time step of ``measurements``.

    A real injection measurement supersedes the pseudo value of the same
    injection. With ``options.cr`` the pseudo errors are spatially
    correlated and W is the inverse of their full covariance.
    """
    opt = options or WlsOptions()
    step = measurements.n_steps - 1 if opt.step is None else opt.step
    p = net.phase_count
    base = net.base_voltage
    fm = build_flow_matrices(net)
    vref = expand_vref(measurements.vref[step], p, p)

    real = measurements.select(real=True, steps=[step])
    replaced = {(m.target, m.phase) for m in real if m.kind == "injected_current"}
    pseudo = [m for m in measurements.select(real=False, steps=[step])
              if (m.target, m.phase) not in replaced]

    # pseudo values rotated into the reference frame, as for the other estimators
    local = np.zeros(net.n_states, dtype=complex)
    eps = np.zeros(net.n_states)
    for m in measurements.select(real=False, steps=[step]):
        k = _state_position(net, m)
        local[k], eps[k] = m.value, m.epsilon
    glob = align_pseudo_angles(fm, local, vref, opt.angle_reference)
    pidx = np.array([_state_position(net, m) for m in pseudo], dtype=int)
    z_p = glob[pidx]
    if opt.cr is not None and pidx.size:
        cr = _cr_for(net, opt.cr, 1)
        keep = np.concatenate([pidx, pidx + net.n_states])
        cr = CorrelationMatrix(cr.matrix[np.ix_(keep, keep)], 1, pidx.size)
    else:
        cr = CorrelationMatrix(np.eye(2 * pidx.size), 1, pidx.size)
    if pidx.size:
        gamma, c = local_frame_covariance(local[pidx], z_p, eps[pidx], cr)
        k_p = real_composite_from_complex(gamma, c).composite()
    else:
        k_p = np.zeros((0, 0))

    z_r = np.array([m.value for m in real], dtype=complex)
    sd_r = sd_from_error(z_r, [m.epsilon for m in real])
    sd_v = sd_from_error(vref, np.full(p, measurements.vref_epsilon))
    k_rv = np.concatenate([sd_r.real ** 2, sd_v.real ** 2, sd_r.imag ** 2, sd_v.imag ** 2])

    y_full, _ = admittance_matrix(net)
    n_all = y_full.shape[0]
    m_mat = np.vstack([_rows(net, y_full, pseudo), _rows(net, y_full, real),
                       np.eye(p, n_all, dtype=complex)])
    z = np.concatenate([z_p, z_r, vref])
    n_meas = z.size
    npz = pidx.size

    # composite covariance ordered [Re of all; Im of all]
    cov = np.zeros((2 * n_meas, 2 * n_meas))
    pr = np.concatenate([np.arange(npz), n_meas + np.arange(npz)])
    cov[np.ix_(pr, pr)] = k_p
    rv = np.concatenate([np.arange(npz, n_meas), n_meas + np.arange(npz, n_meas)])
    cov[rv, rv] = k_rv
    d = np.diag(cov).copy()
    for block in (pr, rv):
        d[block] += _floor(d[block], opt.variance_floor)
    cov[np.diag_indices_from(cov)] = d
    chol = linalg.cholesky(cov, lower=True)
    zr = np.concatenate([z.real, z.imag])

    def whiten(a):
        return linalg.solve_triangular(chol, a, lower=True)

    vm = np.full(n_all, abs(vref[0]) / base)
    va = np.tile(np.angle(vref), n_all // p)

    def model(vm, va):
        v = vm * base * np.exp(1j * va)
        h = m_mat @ v
        dh_dm = m_mat * (base * np.exp(1j * va))
        dh_da = m_mat * (1j * v)
        jac = np.block([[dh_dm.real, dh_da.real], [dh_dm.imag, dh_da.imag]])
        return np.concatenate([h.real, h.imag]), jac

    h, jac = model(vm, va)
    hw = whiten(jac)
    rank = np.linalg.matrix_rank(hw)
    if rank < 2 * n_all:
        raise ObservabilityError(
            f"measurement Jacobian has rank {rank} for {2 * n_all} states; add pseudo measurements")

    converged = False
    dx_norm = np.inf
    it = 0
    for it in range(1, opt.max_iterations + 1):
        rw = whiten(zr - h)
        # QR on the whitened Jacobian; the normal equations square its
        # condition number, which zero-injection rows make very large
        q, r = linalg.qr(hw, mode="economic")
        dx = linalg.solve_triangular(r, q.T @ rw)
        vm = vm + dx[:n_all]
        va = va + dx[n_all:]
        dx_norm = float(np.max(np.abs(dx)))
        h, jac = model(vm, va)
        hw = whiten(jac)
        if dx_norm < opt.tol:
            converged = True
            break

    rw = whiten(zr - h)
    r_inv = linalg.solve_triangular(linalg.qr(hw, mode="r")[0][:2 * n_all], np.eye(2 * n_all))
    gain_inv = r_inv @ r_inv.T
    v = vm * base * np.exp(1j * va)
    # polar -> rectangular for the non-reference voltages
    jr = np.zeros((2 * n_all, 2 * n_all))
    idx = np.arange(n_all)
    jr[idx, idx] = base * np.cos(va)
    jr[idx, n_all + idx] = -v.imag
    jr[n_all + idx, idx] = base * np.sin(va)
    jr[n_all + idx, n_all + idx] = v.real
    rect = jr @ gain_inv @ jr.T
    keep = np.concatenate([np.arange(p, n_all), n_all + np.arange(p, n_all)])
    return WlsResult(vm, va, it, converged, float(np.linalg.norm(rw)), dx_norm, base,
                     rect[np.ix_(keep, keep)])
