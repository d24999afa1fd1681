"""Time-periodic dot models, leads, and occupation factors.

Units: hbar = e = 1, every energy in eV, times in 1/eV.  A periodically
driven dot Hamiltonian is stored through its Fourier blocks

    h(t) = sum_n h^(n) exp(-i n omega t),

so hermiticity of h(t) at all times is the block property
h^(-n) = adjoint(h^(n)).  Leads are structureless (wide-band): each lead
carries a positive-semidefinite level-width matrix Gamma, a chemical
potential mu and a temperature kT.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "fermi",
    "FourierHamiltonian",
    "Lead",
    "SpinfulModel",
    "build_cosine_model",
    "build_circular_model",
    "build_spinful_model",
    "hamiltonian_at_time",
]

_HERM_TOL = 1e-12

# Fermi argument beyond which exp() would be pointless or overflow.
_FERMI_CLAMP = 500.0


def fermi(energy, mu, kT):
    """Fermi-Dirac occupation 1/(1 + exp((E - mu)/kT)).

    Parameters
    ----------
    energy : float or ndarray
        Energy argument in eV.
    mu : float
        Chemical potential in eV.
    kT : float
        Temperature in eV, strictly positive.

    Returns
    -------
    float or ndarray
        Occupation in [0, 1], overflow-safe for large |E - mu|/kT.
    """
    if kT <= 0.0:
        raise ValueError(f"kT must be positive, got {kT}")
    energy = np.asarray(energy, dtype=float)
    if not np.all(np.isfinite(energy)):
        raise ValueError("fermi: non-finite energy argument")
    x = np.clip((energy - mu) / kT, -_FERMI_CLAMP, _FERMI_CLAMP)
    out = 1.0 / (1.0 + np.exp(x))
    return float(out) if out.ndim == 0 else out


def _as_locked(a):
    a = np.array(a, dtype=complex)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FourierHamiltonian:
    """One-body Hamiltonian of a driven dot, stored by Fourier block.

    Attributes
    ----------
    dim : int
        Orbital dimension d.
    omega : float
        Driving angular frequency (eV), > 0.
    blocks : dict[int, ndarray]
        Map n -> h^(n) of shape (d, d).  Missing n means a zero block.
    """

    dim: int
    omega: float
    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.omega > 0.0:
            raise ValueError("omega must be positive")
        clean = {}
        for n, blk in self.blocks.items():
            blk = np.asarray(blk, dtype=complex)
            if blk.shape != (self.dim, self.dim):
                raise ValueError(
                    f"block {n} has shape {blk.shape}, expected {(self.dim, self.dim)}"
                )
            if np.any(blk != 0.0):
                clean[int(n)] = _as_locked(blk)
        scale = max((np.abs(b).max() for b in clean.values()), default=1.0)
        for n, blk in clean.items():
            partner = clean.get(-n)
            other = partner if partner is not None else np.zeros_like(blk)
            if not np.allclose(other, blk.conj().T, atol=_HERM_TOL * (1.0 + scale)):
                raise ValueError(f"blocks {n}/{-n} violate h^(-n) = adjoint(h^(n))")
        object.__setattr__(self, "blocks", clean)

    @property
    def cutoff(self):
        """Largest |n| with a nonzero block."""
        return max((abs(n) for n in self.blocks), default=0)

    def block(self, n):
        """h^(n), a zero matrix when the harmonic is absent."""
        blk = self.blocks.get(int(n))
        if blk is None:
            return np.zeros((self.dim, self.dim), dtype=complex)
        return blk

    def at_time(self, t):
        """Reconstruct h(t) = sum_n h^(n) exp(-i n omega t)."""
        h = np.zeros((self.dim, self.dim), dtype=complex)
        for n, blk in self.blocks.items():
            h += blk * np.exp(-1j * n * self.omega * t)
        return h


def hamiltonian_at_time(model: FourierHamiltonian, t):
    """Evaluate the one-body Hamiltonian at time t (hermitian by block rule)."""
    return model.at_time(t)


@dataclass(frozen=True)
class Lead:
    """Wide-band lead: level-width matrix Gamma (PSD), mu and kT in eV."""

    gamma: np.ndarray
    mu: float
    kT: float
    name: str = ""

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=complex)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("gamma must be a square matrix")
        scale = 1.0 + np.abs(g).max()
        if not np.allclose(g, g.conj().T, atol=_HERM_TOL * scale):
            raise ValueError("gamma must be hermitian")
        evals = np.linalg.eigvalsh(g)
        if evals.min() < -_HERM_TOL * scale:
            raise ValueError("gamma must be positive semidefinite")
        if self.kT <= 0.0:
            raise ValueError("lead kT must be positive")
        object.__setattr__(self, "gamma", _as_locked(g))

    @property
    def dim(self):
        return self.gamma.shape[0]

    def occupation(self, energy):
        """Fermi factor of this lead at the given energies."""
        return fermi(energy, self.mu, self.kT)


def build_cosine_model(eps1, eps2, amplitude, omega):
    """Two-level dot with a cosine interdot drive.

    h(t) = [[eps1, A cos(omega t)], [A cos(omega t), eps2]], which in Fourier
    blocks is a diagonal h^(0) and h^(+-1) = (A/2) sigma_x.
    """
    h0 = np.diag([eps1, eps2]).astype(complex)
    hop = 0.5 * amplitude * np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    return FourierHamiltonian(dim=2, omega=omega, blocks={0: h0, 1: hop, -1: hop})


def build_circular_model(eps1, eps2, amplitude, omega, chirality=1):
    """Two-level dot with a circularly polarized interdot drive.

    chirality +1 gives h_12(t) = A exp(+i omega t) (all weight in the n = -1
    block), chirality -1 the complex conjugate drive.  The chirality -1 model
    equals the blockwise complex conjugate of chirality +1 with n -> -n.
    """
    if chirality not in (1, -1):
        raise ValueError("chirality must be +1 or -1")
    h0 = np.diag([eps1, eps2]).astype(complex)
    up = np.array([[0.0, amplitude], [0.0, 0.0]], dtype=complex)
    lo = up.conj().T
    if chirality == 1:
        blocks = {0: h0, -1: up, 1: lo}
    else:
        blocks = {0: h0, 1: up, -1: lo}
    return FourierHamiltonian(dim=2, omega=omega, blocks=blocks)


@dataclass(frozen=True)
class SpinfulModel:
    """Spinful dot: one FourierHamiltonian per spin plus on-site Hubbard u.

    hubbard_u[i] couples n_{i,up} n_{i,down} on dot site i.  Spin-orbital
    ordering everywhere downstream is (site, spin) lexicographic with spin-up
    first: index 2*i for (i, up), 2*i + 1 for (i, down).
    """

    up: FourierHamiltonian
    down: FourierHamiltonian
    hubbard_u: np.ndarray

    def __post_init__(self):
        if self.up.dim != self.down.dim:
            raise ValueError("spin sectors must have equal dimension")
        if self.up.omega != self.down.omega:
            raise ValueError("spin sectors must share omega")
        u = np.asarray(self.hubbard_u, dtype=float)
        if u.shape != (self.up.dim,):
            raise ValueError("hubbard_u must have one entry per dot site")
        if np.any(u < 0.0):
            raise ValueError("hubbard_u entries must be >= 0")
        u.flags.writeable = False
        object.__setattr__(self, "hubbard_u", u)

    @property
    def n_sites(self):
        return self.up.dim

    @property
    def omega(self):
        return self.up.omega

    def sector(self, spin):
        if spin in ("up", 0):
            return self.up
        if spin in ("down", 1):
            return self.down
        raise ValueError(f"unknown spin {spin!r}")


def build_spinful_model(eps1, eps2, amplitude, omega, u, driving="cosine",
                        chirality=1, conjugate_down=False):
    """Spinful two-site model with equal or spin-conjugated driving.

    conjugate_down=False drives both spins identically; True drives the down
    sector with the complex-conjugated field (for circular driving this flips
    the chirality, for cosine driving it changes nothing).
    """
    if driving == "cosine":
        up = build_cosine_model(eps1, eps2, amplitude, omega)
        down = up
    elif driving == "circular":
        up = build_circular_model(eps1, eps2, amplitude, omega, chirality)
        down_chir = -chirality if conjugate_down else chirality
        down = build_circular_model(eps1, eps2, amplitude, omega, down_chir)
    else:
        raise ValueError(f"unknown driving {driving!r}")
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = np.full(2, float(u))
    return SpinfulModel(up=up, down=down, hubbard_u=u)
