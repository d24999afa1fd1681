"""Floquet-space block linear algebra.

A (2N+1)-harmonic truncation turns a time-periodic d x d operator into a
((2N+1)d)^2 block matrix; block (m, n) sits at rows/cols (m+N)*d ... .
The Floquet Hamiltonian carries h^(m-n) off the block diagonal and the
photon ladder -m*omega on it.  Wide-band lead self-energies are energy
independent (retarded/advanced) or carry lead occupations evaluated at the
block-shifted energies (lesser).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FourierHamiltonian, Lead

__all__ = [
    "FloquetMatrix",
    "build_floquet_hamiltonian",
    "fourier_ladder",
    "fourier_number",
    "sigma_retarded",
    "sigma_lesser",
    "gamma_total",
    "floquet_identity",
    "floquet_sigma_retarded",
    "floquet_sigma_lesser",
    "floquet_gamma",
    "QuasiEnergyGrid",
    "bounded_grid",
    "window_grid",
]


class FloquetMatrix:
    """Dense matrix over the truncated Fourier x orbital space.

    Thin wrapper holding the harmonic cutoff N and orbital dimension d so
    blocks can be addressed by harmonic indices m, n in [-N, N].
    """

    def __init__(self, n_harmonics, dim, data=None):
        self.n_harmonics = int(n_harmonics)
        self.dim = int(dim)
        size = (2 * self.n_harmonics + 1) * self.dim
        if data is None:
            self.data = np.zeros((size, size), dtype=complex)
        else:
            data = np.asarray(data, dtype=complex)
            if data.shape != (size, size):
                raise ValueError(f"data shape {data.shape}, expected {(size, size)}")
            self.data = data

    @property
    def size(self):
        return self.data.shape[0]

    def _slice(self, m):
        if abs(m) > self.n_harmonics:
            raise IndexError(f"harmonic index {m} outside [-N, N]")
        r = (m + self.n_harmonics) * self.dim
        return slice(r, r + self.dim)

    def block(self, m, n):
        return self.data[self._slice(m), self._slice(n)]

    def set_block(self, m, n, value):
        value = np.asarray(value, dtype=complex)
        if value.shape != (self.dim, self.dim):
            raise ValueError(f"block shape {value.shape}, expected {(self.dim, self.dim)}")
        self.data[self._slice(m), self._slice(n)] = value

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


def fourier_ladder(k, n_harmonics):
    """Ladder L_k on the truncated Fourier index: (L_k)_{mn} = delta_{m-n,k}."""
    size = 2 * n_harmonics + 1
    if abs(k) > 2 * n_harmonics:
        return np.zeros((size, size))
    return np.eye(size, k=-k)


def fourier_number(n_harmonics):
    """Diagonal harmonic-number matrix diag(-N ... N)."""
    return np.diag(np.arange(-n_harmonics, n_harmonics + 1).astype(float))


def build_floquet_hamiltonian(model: FourierHamiltonian, n_harmonics):
    """Floquet Hamiltonian: block (m, n) = h^(m-n) - m*omega*delta_mn*I.

    n_harmonics must not truncate the drive's own harmonic content.
    """
    if n_harmonics < model.cutoff:
        raise ValueError(
            f"n_harmonics={n_harmonics} below drive harmonic cutoff {model.cutoff}"
        )
    d = model.dim
    out = FloquetMatrix(n_harmonics, d)
    eye = np.eye(d)
    for k, blk in model.blocks.items():
        out.data += np.kron(fourier_ladder(k, n_harmonics), blk)
    out.data -= model.omega * np.kron(fourier_number(n_harmonics), eye)
    return out


# ---------------------------------------------------------------- self-energies

def _check_leads(leads):
    if not leads:
        raise ValueError("at least one lead required")
    dim = leads[0].dim
    for l in leads:
        if l.dim != dim:
            raise ValueError("leads carry inconsistent gamma dimensions")
    return dim


def gamma_total(leads):
    """Sum of lead level-width matrices."""
    dim = _check_leads(leads)
    g = np.zeros((dim, dim), dtype=complex)
    for l in leads:
        g += l.gamma
    return g


def sigma_retarded(leads):
    """Wide-band retarded lead self-energy, -(i/2) sum_l Gamma_l (constant)."""
    return -0.5j * gamma_total(leads)


def sigma_lesser(leads, energy):
    """Lesser lead self-energy i sum_l Gamma_l f_l(E).

    energy may be a scalar (returns (d, d)) or a 1d array (returns
    (nE, d, d)); anti-hermitian either way.
    """
    dim = _check_leads(leads)
    energy = np.asarray(energy, dtype=float)
    scalar = energy.ndim == 0
    e = np.atleast_1d(energy)
    out = np.zeros((e.size, dim, dim), dtype=complex)
    for l in leads:
        out += 1j * np.multiply.outer(l.occupation(e), np.asarray(l.gamma))
    return out[0] if scalar else out


def floquet_identity(n_harmonics, dim):
    return np.eye((2 * n_harmonics + 1) * dim, dtype=complex)


def floquet_sigma_retarded(leads, n_harmonics):
    """Block-diagonal Floquet lift of the constant retarded self-energy."""
    return np.kron(np.eye(2 * n_harmonics + 1), sigma_retarded(leads))


def floquet_sigma_lesser(leads, energy, n_harmonics, omega):
    """Block-diagonal Floquet lesser self-energy, block m at energy E + m*omega."""
    dim = _check_leads(leads)
    shifts = energy + omega * np.arange(-n_harmonics, n_harmonics + 1)
    blocks = sigma_lesser(leads, shifts)
    size = (2 * n_harmonics + 1) * dim
    out = np.zeros((size, size), dtype=complex)
    for i in range(2 * n_harmonics + 1):
        out[i * dim:(i + 1) * dim, i * dim:(i + 1) * dim] = blocks[i]
    return out


def floquet_gamma(lead: Lead, n_harmonics):
    """Block-diagonal Floquet lift of one lead's Gamma."""
    return np.kron(np.eye(2 * n_harmonics + 1), np.asarray(lead.gamma))


# ---------------------------------------------------------------------- grids

@dataclass(frozen=True)
class QuasiEnergyGrid:
    """Uniform quasi-energy grid with positive quadrature weights.

    kind 'bounded' covers [0, omega) for the full-Floquet-matrix solver;
    kind 'window' covers one wide, decay-padded energy window for the
    sideband-column solver.  The step always divides omega exactly, so the
    bounded panels replicated by m*omega land on window points and the two
    quadratures sample identical physical energies.
    """

    points: np.ndarray
    step: float
    omega: float
    kind: str

    def __post_init__(self):
        if self.kind not in ("bounded", "window"):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if self.step <= 0.0:
            raise ValueError("grid step must be positive")
        pts = np.asarray(self.points, dtype=float)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def weights(self):
        """Trapezoid weights; the bounded grid tiles a period, so its
        rule is the periodic trapezoid (uniform)."""
        w = np.full(self.points.size, self.step)
        if self.kind == "window" and self.points.size > 1:
            w[0] *= 0.5
            w[-1] *= 0.5
        return w

    def __len__(self):
        return self.points.size


def _snap_step(omega, step):
    n = max(4, int(round(omega / step)))
    return omega / n, n


def default_step(leads, omega):
    """Default grid step min(Gamma/20, kT/10, omega/400)."""
    gval = float(np.linalg.eigvalsh(gamma_total(leads)).max())
    ktmin = min(l.kT for l in leads)
    return min(gval / 20.0, ktmin / 10.0, omega / 400.0)


def bounded_grid(omega, step=None, leads=None):
    """Grid over [0, omega) for the full-Floquet-matrix quadratures."""
    if step is None:
        if leads is None:
            raise ValueError("bounded_grid needs a step or leads for the default")
        step = default_step(leads, omega)
    h, n = _snap_step(omega, step)
    pts = h * np.arange(n)
    return QuasiEnergyGrid(points=pts, step=h, omega=omega, kind="bounded")


def window_grid(leads, omega, n_harmonics, step=None, mu_lo=None, mu_hi=None):
    """Wide padded window for the sideband-column quadratures.

    The window covers [mu_min - 25 kT - (N+1) omega - 10 Gamma,
    mu_max + 25 kT + (N+1) omega + 10 Gamma]; mu_lo/mu_hi widen the lead
    range (used by bias sweeps so one grid serves every sweep point).
    Edges snap outward to integer multiples of the step, and the step
    divides omega exactly.
    """
    if step is None:
        step = default_step(leads, omega)
    h, _ = _snap_step(omega, step)
    mus = [l.mu for l in leads]
    if mu_lo is not None:
        mus.append(float(mu_lo))
    if mu_hi is not None:
        mus.append(float(mu_hi))
    kt = max(l.kT for l in leads)
    gval = float(np.linalg.eigvalsh(gamma_total(leads)).max())
    pad = 25.0 * kt + (n_harmonics + 1) * omega + 10.0 * gval
    lo = min(mus) - pad
    hi = max(mus) + pad
    klo = int(np.floor(lo / h))
    khi = int(np.ceil(hi / h))
    pts = h * np.arange(klo, khi + 1)
    return QuasiEnergyGrid(points=pts, step=h, omega=omega, kind="window")
