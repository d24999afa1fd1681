"""Second-quantized operators on the full Fock space.

Occupation-number basis over M spin-orbitals, dimension 2^M, with orbital
i stored in bit i of the basis index (least significant bit first) and the
Jordan-Wigner sign counting occupied orbitals below i.  Spinful models
order spin-orbitals (site, spin) lexicographically with spin-up first, so
orbital index = 2*site + spin.
"""

from __future__ import annotations

import numpy as np

from .model import FourierHamiltonian, SpinfulModel

__all__ = [
    "annihilation_operator",
    "ladder_operators",
    "number_operators",
    "spin_orbital_index",
    "many_body_model",
    "occupation_counts",
]


def spin_orbital_index(site, spin):
    """Flat orbital index for (site, spin), spin 0 = up, 1 = down."""
    if spin not in (0, 1):
        raise ValueError(f"spin must be 0 or 1, got {spin!r}")
    return 2 * site + spin


def annihilation_operator(n_orbitals, orbital):
    """Dense matrix of d_orbital on the 2^M Fock space."""
    if not 0 <= orbital < n_orbitals:
        raise ValueError(f"orbital {orbital} outside range({n_orbitals})")
    dim = 1 << n_orbitals
    op = np.zeros((dim, dim))
    bit = 1 << orbital
    below = bit - 1
    for state in range(dim):
        if state & bit:
            sign = -1.0 if bin(state & below).count("1") % 2 else 1.0
            op[state ^ bit, state] = sign
    return op


def ladder_operators(n_orbitals):
    """All annihilation operators, index order = orbital order."""
    return [annihilation_operator(n_orbitals, i) for i in range(n_orbitals)]


def number_operators(n_orbitals):
    """Diagonal occupation operators n_i = d_i^+ d_i."""
    dim = 1 << n_orbitals
    out = []
    for i in range(n_orbitals):
        bit = 1 << i
        out.append(np.diag([1.0 if s & bit else 0.0 for s in range(dim)]))
    return out


def occupation_counts(n_orbitals, orbitals=None):
    """Total occupation of the given orbitals per basis state."""
    if orbitals is None:
        orbitals = range(n_orbitals)
    dim = 1 << n_orbitals
    counts = np.zeros(dim, dtype=int)
    for i in orbitals:
        bit = 1 << i
        counts += (np.arange(dim) & bit) >> i
    return counts


def _quadratic_lift(block, ladders):
    dim = ladders[0].shape[0]
    out = np.zeros((dim, dim), dtype=complex)
    n = len(ladders)
    for i in range(n):
        for j in range(n):
            if block[i, j] != 0.0:
                out += block[i, j] * (ladders[i].T @ ladders[j])
    return out


def many_body_model(model):
    """Fourier blocks of the many-body Hamiltonian as a FourierHamiltonian.

    A FourierHamiltonian lifts to H^(n) = sum_ij h^(n)_ij d_i^+ d_j on
    2^dim states.  A SpinfulModel adds both spin sectors on the
    interleaved spin-orbital layout plus the static Hubbard term
    sum_i u_i n_iup n_idown in the n = 0 block.

    The result is itself a FourierHamiltonian (on the Fock space), so the
    usual Floquet assembly applies unchanged.
    """
    if isinstance(model, FourierHamiltonian):
        ladders = ladder_operators(model.dim)
        blocks = {n: _quadratic_lift(blk, ladders) for n, blk in model.blocks.items()}
        return FourierHamiltonian(dim=1 << model.dim, omega=model.omega, blocks=blocks)
    if not isinstance(model, SpinfulModel):
        raise TypeError(f"cannot lift {type(model).__name__}")
    n_orb = 2 * model.n_sites
    ladders = ladder_operators(n_orb)
    up = [ladders[spin_orbital_index(s, 0)] for s in range(model.n_sites)]
    down = [ladders[spin_orbital_index(s, 1)] for s in range(model.n_sites)]
    blocks = {}
    for spin, sub in ((0, up), (1, down)):
        sector = model.sector(spin)
        for n, blk in sector.blocks.items():
            lifted = _quadratic_lift(blk, sub)
            blocks[n] = blocks.get(n, 0.0) + lifted
    nums = number_operators(n_orb)
    hubbard = sum(
        model.hubbard_u[s]
        * nums[spin_orbital_index(s, 0)] @ nums[spin_orbital_index(s, 1)]
        for s in range(model.n_sites)
    )
    blocks[0] = blocks.get(0, 0.0) + hubbard
    return FourierHamiltonian(dim=1 << n_orb, omega=model.omega, blocks=blocks)
