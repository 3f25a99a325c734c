"""Load correlation and complex covariance bookkeeping.

A complex random vector ``z = x + j y`` is described either by its real
composite covariance (blocks ``K_rr = E[x x^T]``, ``K_ii = E[y y^T]``,
``K_ri = E[x y^T]``, ``K_ir = E[y x^T]``) or by the pair

    Gamma = E[(z - mu)(z - mu)^H] = K_rr + K_ii + j (K_ir - K_ri)
    C     = E[(z - mu)(z - mu)^T] = K_rr - K_ii + j (K_ir + K_ri)

with the inverse map

    K_rr = Re(Gamma + C) / 2,   K_ii = Re(Gamma - C) / 2,
    K_ir = Im(Gamma + C) / 2,   K_ri = Im(C - Gamma) / 2.

Correlation matrices over ``nt`` time slots are stored chronologically
(slot 0 is the oldest, slot ``nt - 1`` the current step) and arranged as
``[[PP, PQ], [QP, QQ]]`` with one ``n_vars x n_vars`` sub-block per pair of
slots. P stands for the real-part series and Q for the imaginary-part
series of whatever complex quantity the profiles carry.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class ZeroVarianceError(ValueError):
    """Correlation involving a constant series."""


class NotPositiveDefiniteError(ValueError):
    """Covariance assembled from a correlation matrix that is not PSD."""


# -- profiles --------------------------------------------------------------------------


@dataclass(frozen=True)
class LoadProfile:
    area_id: str
    samples: np.ndarray
    interval_min: float = 1.0

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1 or s.size < 2:
            raise ValueError(f"profile {self.area_id!r}: need a 1-d series of at least 2 samples")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"profile {self.area_id!r}: missing or non-finite samples")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def real(self) -> "LoadProfile":
        return LoadProfile(self.area_id, self.samples.real.astype(float), self.interval_min)

    @property
    def imag(self) -> "LoadProfile":
        return LoadProfile(self.area_id, np.imag(self.samples).astype(float), self.interval_min)

    def to_current(self, voltage) -> "LoadProfile":
        """Complex power (VA) to load current (A) at a fixed voltage phasor."""
        return LoadProfile(self.area_id, np.conj(self.samples / voltage), self.interval_min)


def split_complex(profiles: Sequence[LoadProfile]):
    """Real-part and imaginary-part profile lists for :func:`build_cr_matrix`."""
    return [p.real for p in profiles], [p.imag for p in profiles]


def empirical_correlation(a: LoadProfile, b: LoadProfile, lag: int = 0) -> float:
    """Pearson correlation between ``a[t]`` and ``b[t + lag]``.

    With ``b is a`` this is the lag-``lag`` autocorrelation; with ``lag = 0``
    the spatial correlation of two areas.
    """
    x = np.asarray(a.samples, dtype=float)
    y = np.asarray(b.samples, dtype=float)
    if x.size != y.size:
        raise ValueError(f"profiles {a.area_id!r} and {b.area_id!r} differ in length")
    if not 0 <= lag < x.size - 1:
        raise ValueError(f"lag {lag} out of range for {x.size} samples")
    x = x[:x.size - lag]
    y = y[lag:]
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(dx @ dx)
    sy = np.sqrt(dy @ dy)
    for s, name in ((sx, a.area_id), (sy, b.area_id)):
        if s == 0 or s < 1e-12 * max(1.0, np.abs(x).max(), np.abs(y).max()) * np.sqrt(x.size):
            raise ZeroVarianceError(f"profile {name!r} has zero variance; correlation undefined")
    return float(np.clip(dx @ dy / (sx * sy), -1.0, 1.0))


# -- correlation matrix ----------------------------------------------------------------


@dataclass(frozen=True)
class CorrelationMatrix:
    matrix: np.ndarray
    nt: int
    n_vars: int
    labels: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        size = 2 * self.n_vars * self.nt
        if m.shape != (size, size):
            raise ValueError(f"correlation matrix has shape {m.shape}, expected ({size}, {size})")
        if not np.allclose(m, m.T, atol=1e-10):
            raise ValueError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(m), 1.0, atol=1e-10):
            raise ValueError("correlation matrix must have a unit diagonal")
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != self.n_vars:
                raise ValueError("need one label per variable")
            object.__setattr__(self, "labels", labels)
        m = (m + m.T) / 2
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def quadrant(self, name: str) -> np.ndarray:
        """One of ``"PP"``, ``"PQ"``, ``"QP"``, ``"QQ"`` (each ``n_vars * nt`` square)."""
        h = self.n_vars * self.nt
        rows = {"P": slice(0, h), "Q": slice(h, 2 * h)}
        return self.matrix[rows[name[0]], rows[name[1]]]

    def lag_block(self, name: str, row_slot: int, col_slot: int) -> np.ndarray:
        q = self.quadrant(name)
        n = self.n_vars
        return q[row_slot * n:(row_slot + 1) * n, col_slot * n:(col_slot + 1) * n]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def last_slots(self, nt: int) -> "CorrelationMatrix":
        """The sub-matrix for the most recent ``nt`` slots."""
        if not 1 <= nt <= self.nt:
            raise ValueError(f"cannot take {nt} slots from a {self.nt}-slot matrix")
        n, h = self.n_vars, self.n_vars * self.nt
        keep = np.arange((self.nt - nt) * n, h)
        idx = np.concatenate([keep, keep + h])
        return CorrelationMatrix(self.matrix[np.ix_(idx, idx)], nt, n, self.labels)

    def spatial(self) -> "CorrelationMatrix":
        return self.last_slots(1)

    def reorder(self, labels: Sequence[str], fill_missing: bool = False) -> "CorrelationMatrix":
        """Permute (and optionally pad) variables to match ``labels``.

        Variables absent from this matrix become uncorrelated with everything
        when ``fill_missing`` is set.
        """
        if self.labels is None:
            raise ValueError("correlation matrix carries no labels to reorder by")
        labels = [str(x) for x in labels]
        pos = {lab: k for k, lab in enumerate(self.labels)}
        missing = [lab for lab in labels if lab not in pos]
        if missing and not fill_missing:
            raise KeyError(f"variables {missing[:5]} not in correlation matrix")
        n_new = len(labels)
        src = []
        for slot in range(2 * self.nt):
            for lab in labels:
                src.append(slot * self.n_vars + pos[lab] if lab in pos else -1)
        src = np.array(src)
        have = src >= 0
        out = np.eye(2 * n_new * self.nt)
        out[np.ix_(have, have)] = self.matrix[np.ix_(src[have], src[have])]
        return CorrelationMatrix(out, self.nt, n_new, tuple(labels))

    # -- csv ------------------------------------------------------------------------

    def header(self) -> list[str]:
        labels = self.labels or tuple(str(k) for k in range(self.n_vars))
        lag = [f"t-{self.nt - 1 - s}" if s < self.nt - 1 else "t" for s in range(self.nt)]
        return [f"{q}:{lab}@{lag[s]}" for q in "PQ" for s in range(self.nt) for lab in labels]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["", *self.header()])
            for name, row in zip(self.header(), self.matrix):
                w.writerow([name, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path) -> "CorrelationMatrix":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0][1:]
        m = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        slots = []
        labels = []
        for h in header:
            q, rest = h.split(":", 1)
            lab, lag = rest.rsplit("@", 1)
            if q == "P" and lag not in slots:
                slots.append(lag)
            if q == "P" and lag == "t":
                labels.append(lab)
        nt = len(slots)
        return cls(m, nt, len(labels), tuple(labels))


def _stack(profiles):
    x = np.array([np.asarray(p.samples, dtype=float) for p in profiles])
    if len({p.samples.size for p in profiles}) != 1:
        raise ValueError("profiles must be aligned (equal length)")
    return x


def _lag_correlations(xa: np.ndarray, xb: np.ndarray, lag: int, ids_a, ids_b) -> np.ndarray:
    """Vectorised Pearson correlation of ``xa[:, t]`` against ``xb[:, t + lag]``."""
    n = xa.shape[1]
    a = xa[:, :n - lag]
    b = xb[:, lag:]
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    na = np.sqrt(np.einsum("ij,ij->i", a, a))
    nb = np.sqrt(np.einsum("ij,ij->i", b, b))
    scale = max(1.0, np.abs(xa).max(), np.abs(xb).max()) * np.sqrt(n) * 1e-12
    for norms, ids in ((na, ids_a), (nb, ids_b)):
        bad = np.flatnonzero(norms <= scale)
        if bad.size:
            raise ZeroVarianceError(
                f"variable {ids[bad[0]]!r} has zero variance at lag {lag}; correlation undefined")
    return np.clip((a @ b.T) / np.outer(na, nb), -1.0, 1.0)


def build_cr_matrix(profiles_p: Sequence[LoadProfile], profiles_q: Sequence[LoadProfile],
                    nt: int = 1) -> CorrelationMatrix:
    """Spatial-temporal correlation matrix of real-part and imaginary-part series.

    The entry for variable ``a`` at slot ``j`` and variable ``b`` at slot
    ``k >= j`` is ``empirical_correlation(a, b, k - j)``; entries below the
    block diagonal follow by symmetry.
    """
    if nt < 1:
        raise ValueError("nt must be at least 1")
    if len(profiles_p) != len(profiles_q):
        raise ValueError("need one imaginary-part profile per real-part profile")
    ids = [p.area_id for p in profiles_p]
    n = len(ids)
    series = _stack(list(profiles_p) + list(profiles_q))
    if nt >= series.shape[1] - 1:
        raise ValueError("profiles are too short for the requested number of slots")
    all_ids = [f"P:{i}" for i in ids] + [f"Q:{i}" for i in ids]
    lags = [_lag_correlations(series, series, lag, all_ids, all_ids) for lag in range(nt)]
    h = n * nt
    m = np.empty((2 * h, 2 * h))
    for qa in range(2):
        for qb in range(2):
            for j in range(nt):
                for k in range(nt):
                    if k >= j:
                        blk = lags[k - j][qa * n:(qa + 1) * n, qb * n:(qb + 1) * n]
                    else:
                        blk = lags[j - k][qb * n:(qb + 1) * n, qa * n:(qa + 1) * n].T
                    m[qa * h + j * n:qa * h + (j + 1) * n, qb * h + k * n:qb * h + (k + 1) * n] = blk
    np.fill_diagonal(m, 1.0)
    m = (m + m.T) / 2
    return CorrelationMatrix(m, nt, n, tuple(ids))


def nearest_pd_correlation(cr: CorrelationMatrix, tol: float = 1e-8,
                           max_iter: int = 500) -> CorrelationMatrix:
    """Nearest correlation matrix by alternating projections with Dykstra's
    correction, then a congruence clean-up that pins the unit diagonal
    without giving up positive semi-definiteness."""
    a = np.array(cr.matrix, dtype=float)
    if np.linalg.eigvalsh(a)[0] >= 0:
        return cr
    y = a.copy()
    ds = np.zeros_like(a)
    for _ in range(max_iter):
        r = y - ds
        w, v = np.linalg.eigh(r)
        x = (v * np.clip(w, 0, None)) @ v.T
        ds = x - r
        y_new = x.copy()
        np.fill_diagonal(y_new, 1.0)
        change = np.linalg.norm(y_new - y, "fro") / max(1.0, np.linalg.norm(y, "fro"))
        y = y_new
        if change < tol:
            break
    w, v = np.linalg.eigh((y + y.T) / 2)
    x = (v * np.clip(w, 0, None)) @ v.T
    d = 1.0 / np.sqrt(np.diag(x))
    x = x * np.outer(d, d)
    x = (x + x.T) / 2
    np.fill_diagonal(x, 1.0)
    return CorrelationMatrix(x, cr.nt, cr.n_vars, cr.labels)


# -- covariance ----------------------------------------------------------------------


def sd_from_error(mean, epsilon):
    """Standard deviation (as a complex number ``sd_re + j sd_im``) of a value
    whose error band is ``epsilon`` percent at three sigma."""
    if np.any(np.asarray(epsilon) < 0):
        raise ValueError("epsilon must be non-negative")
    return np.asarray(mean, dtype=complex) * np.asarray(epsilon, dtype=float) / 300.0


@dataclass(frozen=True)
class RealCompositeCovariance:
    cov_rr: np.ndarray
    cov_ii: np.ndarray
    cov_ri: np.ndarray
    cov_ir: np.ndarray

    def composite(self) -> np.ndarray:
        return np.block([[self.cov_rr, self.cov_ri], [self.cov_ir, self.cov_ii]])

    @classmethod
    def from_composite(cls, k: np.ndarray) -> "RealCompositeCovariance":
        n = k.shape[0] // 2
        return cls(k[:n, :n], k[n:, n:], k[:n, n:], k[n:, :n])

    def to_complex(self):
        """``(Gamma, C)`` for these real-part/imaginary-part blocks."""
        gamma = self.cov_rr + self.cov_ii + 1j * (self.cov_ir - self.cov_ri)
        c = self.cov_rr - self.cov_ii + 1j * (self.cov_ir + self.cov_ri)
        return gamma, c


def real_composite_from_complex(gamma, c) -> RealCompositeCovariance:
    gamma = np.atleast_2d(np.asarray(gamma, dtype=complex))
    c = np.atleast_2d(np.asarray(c, dtype=complex))
    return RealCompositeCovariance(
        cov_rr=0.5 * (gamma + c).real,
        cov_ii=0.5 * (gamma - c).real,
        cov_ri=0.5 * (c - gamma).imag,
        cov_ir=0.5 * (gamma + c).imag,
    )


def _psd_tolerance(k: np.ndarray) -> float:
    return 1e-10 * max(1.0, float(np.abs(np.diag(k)).max(initial=0.0)))


def assemble_complex_covariance(sd, cr: CorrelationMatrix):
    """Covariance and pseudo-covariance from per-variable standard deviations
    and a correlation matrix; ``sd`` is stacked like the matrix slots."""
    sd = np.asarray(sd, dtype=complex).ravel()
    h = cr.n_vars * cr.nt
    if sd.size != h:
        raise ValueError(f"sd has length {sd.size}, correlation matrix expects {h}")
    s_re = np.abs(sd.real)
    s_im = np.abs(sd.imag)
    cov_rr = np.outer(s_re, s_re) * cr.quadrant("PP")
    cov_ii = np.outer(s_im, s_im) * cr.quadrant("QQ")
    cov_ri = np.outer(s_re, s_im) * cr.quadrant("PQ")
    comp = RealCompositeCovariance(cov_rr, cov_ii, cov_ri, cov_ri.T)
    k = comp.composite()
    if np.linalg.eigvalsh(k)[0] < -_psd_tolerance(k):
        raise NotPositiveDefiniteError(
            "assembled covariance is not positive semi-definite; "
            "repair the correlation matrix with nearest_pd_correlation first")
    return comp.to_complex()


@dataclass(frozen=True)
class ComplexGaussian:
    """Improper complex Gaussian with mean, covariance and pseudo-covariance."""

    mean: np.ndarray
    gamma: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=complex))
        gamma = np.atleast_2d(np.asarray(self.gamma, dtype=complex))
        c = np.atleast_2d(np.asarray(self.c, dtype=complex))
        n = mean.size
        if gamma.shape != (n, n) or c.shape != (n, n):
            raise ValueError(f"mean of length {n} with gamma {gamma.shape} and c {c.shape}")
        for name, arr in (("mean", mean), ("gamma", gamma), ("c", c)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.mean.size

    def composite(self) -> np.ndarray:
        return real_composite_from_complex(self.gamma, self.c).composite()

    def augmented(self) -> np.ndarray:
        return np.block([[self.gamma, self.c], [self.c.conj(), self.gamma.conj()]])

    def validate(self, atol: float | None = None) -> None:
        scale = max(1.0, float(np.abs(np.diag(self.gamma)).max(initial=0.0)))
        atol = 1e-9 * scale if atol is None else atol
        if not np.allclose(self.gamma, self.gamma.conj().T, rtol=0, atol=atol):
            raise ValueError("covariance is not Hermitian")
        if not np.allclose(self.c, self.c.T, rtol=0, atol=atol):
            raise ValueError("pseudo-covariance is not symmetric")
        if np.linalg.eigvalsh(self.composite())[0] < -atol:
            raise ValueError("augmented covariance is not positive semi-definite")

    def marginal(self, idx) -> "ComplexGaussian":
        idx = np.asarray(idx, dtype=int)
        return ComplexGaussian(self.mean[idx], self.gamma[np.ix_(idx, idx)], self.c[np.ix_(idx, idx)])

    def linear_map(self, t: np.ndarray, offset=None) -> "ComplexGaussian":
        """Distribution of ``t @ z + offset`` (a strictly linear map)."""
        mean = t @ self.mean if offset is None else t @ self.mean + offset
        return ComplexGaussian(mean, t @ self.gamma @ t.conj().T, t @ self.c @ t.T)

    @classmethod
    def from_composite(cls, mean, k) -> "ComplexGaussian":
        gamma, c = RealCompositeCovariance.from_composite(np.asarray(k, dtype=float)).to_complex()
        return cls(mean, gamma, c)

    @classmethod
    def independent(cls, *parts: "ComplexGaussian") -> "ComplexGaussian":
        """Block-diagonal joint of independent components."""
        n = sum(p.dim for p in parts)
        gamma = np.zeros((n, n), dtype=complex)
        c = np.zeros((n, n), dtype=complex)
        start = 0
        for p in parts:
            blk = slice(start, start + p.dim)
            gamma[blk, blk] = p.gamma
            c[blk, blk] = p.c
            start += p.dim
        return cls(np.concatenate([p.mean for p in parts]), gamma, c)
