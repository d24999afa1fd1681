"""Equation-of-motion ansatz for the interacting driven dot.

Truncating the Hubbard hierarchy at the double-particle level closes the
retarded function of one spin sector against a second resolvent shifted by
the charging matrix and sourced by the opposite-spin occupations; the
lesser functions follow from the same two resolvents with the lead
in-tunneling self-energy on the right.  Static and Floquet problems share
this solver core.  In the Floquet case the charging and occupation
matrices replicate over the diagonal Fourier blocks and the observables
reuse the full-matrix averaging formulas, so with every u_i = 0 the
solver collapses onto the non-interacting full-matrix one.

The closure fixes the positions of the charging steps, not their heights,
and carries no Kondo physics.  Occupations enter as external parameters:
fixed-half freezes them at one half, which already places the steps
without iteration; the self-consistent mode feeds the occupation integral
of the lesser function back into the opposite spin sector under damped
mixing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .floquet_matrix import QuasiEnergyGrid, bounded_grid, gamma_total
from .model import FourierHamiltonian, SpinfulModel
from .negf import _harmonic_shifts, _lead_index, _lesser_block_factors, m_matrix

__all__ = [
    "InteractingConfig",
    "ConvergenceError",
    "EomGreenFunctions",
    "InteractingSolution",
    "SpinResolvedResult",
    "SelfConsistentResult",
    "solve_interacting_static",
    "solve_interacting_floquet",
    "avg_number_finegf",
    "avg_current_finegf",
    "spin_resolved_averages",
    "interacting_averages",
    "self_consistent_occupations",
    "static_support_grid",
]

SPINS = ("up", "down")

_MODES = ("fixed-half", "self-consistent")


@dataclass(frozen=True)
class InteractingConfig:
    """Occupation policy for the interacting solvers.

    fixed-half freezes every <n> at one half and solves once.  The
    self-consistent mode iterates the occupation map with damped mixing;
    the default damping of 0.3 keeps the iteration stable near charging
    steps, where the undamped map is prone to bistable flips.
    """

    mode: str = "fixed-half"
    mixing: float = 0.3
    occ_tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if not 0.0 < self.mixing <= 1.0:
            raise ValueError("mixing must lie in (0, 1]")
        if not self.occ_tol > 0.0:
            raise ValueError("occ_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


class ConvergenceError(RuntimeError):
    """Occupation iteration exhausted max_iter."""

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


# ------------------------------------------------------------ input handling

def _sector_pair(model):
    """(up, down) Fourier Hamiltonians; a spin-symmetric input is shared."""
    if isinstance(model, SpinfulModel):
        return model.up, model.down
    if isinstance(model, FourierHamiltonian):
        return model, model
    raise TypeError("expected a SpinfulModel or FourierHamiltonian")


def _static_sectors(h):
    if isinstance(h, (SpinfulModel, FourierHamiltonian)):
        pair = _sector_pair(h)
    else:
        arr = np.asarray(h, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("static h must be a square matrix")
        # omega is a placeholder here; nothing reads it in an N = 0 solve
        wrapped = FourierHamiltonian(dim=arr.shape[0], omega=1.0, blocks={0: arr})
        pair = (wrapped, wrapped)
    for sec in pair:
        if sec.cutoff > 0:
            raise ValueError(
                "static solver requires a single Fourier block; "
                "use solve_interacting_floquet for driven models"
            )
    return pair


def _charging_vector(u, model, dim):
    if u is None:
        if isinstance(model, SpinfulModel):
            return model.hubbard_u
        raise ValueError("u is required unless the model is a SpinfulModel")
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = np.full(dim, float(u))
    if u.shape != (dim,):
        raise ValueError(f"u must be a scalar or shape ({dim},)")
    if np.any(u < 0.0):
        raise ValueError("charging energies must be >= 0")
    return u


def _occupation_matrix(occupations, dim):
    """Normalize to a (2, dim) array ordered (up, down), validated to [0, 1]."""
    if isinstance(occupations, dict):
        missing = [s for s in SPINS if s not in occupations]
        if missing:
            raise ValueError(f"occupation dict is missing {missing}")
        occ = np.array(
            [np.broadcast_to(np.asarray(occupations[s], dtype=float), (dim,))
             for s in SPINS]
        )
    else:
        occ = np.asarray(occupations, dtype=float)
        if occ.ndim == 0:
            occ = np.full((2, dim), float(occ))
        elif occ.shape == (dim,):
            occ = np.array([occ, occ])
        elif occ.shape != (2, dim):
            raise ValueError(
                f"occupations must be a scalar, shape ({dim},), shape (2, {dim}),"
                " or a dict with 'up' and 'down' entries"
            )
    if np.any(occ < 0.0) or np.any(occ > 1.0):
        raise ValueError("occupations must lie in [0, 1]")
    return occ


# -------------------------------------------------------------- solver core

def _dagger(stack):
    return stack.conj().swapaxes(-1, -2)


def _invert_reported(mat, energies, label):
    try:
        return np.linalg.inv(mat)
    except np.linalg.LinAlgError:
        worst = int(np.argmin(np.abs(np.linalg.det(mat))))
        raise np.linalg.LinAlgError(
            f"{label} system is singular at energy {energies[worst]:.9g}"
        ) from None


def _block_diag_stack(blocks):
    """(nE, nb, d, d) harmonic factors into a (nE, nb*d, nb*d) block diagonal."""
    ne, nb, d, _ = blocks.shape
    out = np.zeros((ne, nb * d, nb * d), dtype=complex)
    for m in range(nb):
        out[:, m * d:(m + 1) * d, m * d:(m + 1) * d] = blocks[:, m]
    return out


def _eom_chain(mm, uf, nf, sig, energies):
    """Retarded and lesser pairs from the two shifted resolvents.

    mm is the non-interacting inverse propagator E I - h - Sigma^r stacked
    over energies, uf the charging matrix, nf the opposite-spin occupation
    matrix, sig the in-tunneling self-energy stack i sum_l f_l Gamma_l.
    With uf = 0 the retarded output is bitwise the plain inverse and both
    pair functions vanish identically.
    """
    ai = _invert_reported(mm, energies, "retarded")
    bi = _invert_reported(mm - uf, energies, "charging-shifted")
    g2r = bi @ nf
    gr = ai + (ai @ uf) @ g2r
    g2l = bi @ (sig @ _dagger(g2r))
    gl = ai @ (uf @ g2l + sig @ _dagger(gr))
    return gr, g2r, gl, g2l


@dataclass(frozen=True)
class EomGreenFunctions:
    """Retarded and lesser functions of one spin sector on an energy batch.

    Floquet solves store full block matrices of side (2N+1) d; static
    solves are the N = 0 case.  pair_retarded and pair_lesser hold the
    double-particle functions the closure introduces.
    """

    energies: np.ndarray
    omega: float
    n_harmonics: int
    dim: int
    retarded: np.ndarray
    lesser: np.ndarray
    pair_retarded: np.ndarray
    pair_lesser: np.ndarray

    def block(self, m, n, kind="retarded"):
        """Fourier block (m, n) of one stored function on the energy batch."""
        if kind not in ("retarded", "lesser", "pair_retarded", "pair_lesser"):
            raise ValueError(f"unknown kind {kind!r}")
        if abs(m) > self.n_harmonics or abs(n) > self.n_harmonics:
            raise IndexError(f"block index ({m}, {n}) outside [-N, N]")
        d = self.dim
        i = (m + self.n_harmonics) * d
        j = (n + self.n_harmonics) * d
        return getattr(self, kind)[:, i:i + d, j:j + d]


@dataclass(frozen=True)
class InteractingSolution:
    up: EomGreenFunctions
    down: EomGreenFunctions

    def sector(self, spin):
        if spin in ("up", 0):
            return self.up
        if spin in ("down", 1):
            return self.down
        raise ValueError(f"unknown spin {spin!r}")


def _solve_pair(sectors, leads, model, u, occupations, n_harmonics, energies):
    dim = sectors[0].dim
    if leads and leads[0].dim != dim:
        raise ValueError(
            f"lead gamma dimension {leads[0].dim} does not match model dimension {dim}"
        )
    uvec = _charging_vector(u, model, dim)
    occ = _occupation_matrix(occupations, dim)
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    nb = 2 * n_harmonics + 1
    uf = np.kron(np.eye(nb), np.diag(uvec))
    shifted = _harmonic_shifts(energies, sectors[0].omega, n_harmonics)
    sig = _block_diag_stack(_lesser_block_factors(leads, shifted))
    out = {}
    for i, spin in enumerate(SPINS):
        nf = np.kron(np.eye(nb), np.diag(occ[1 - i]))
        mm = m_matrix(sectors[i], leads, n_harmonics, energies)
        gr, g2r, gl, g2l = _eom_chain(mm, uf, nf, sig, energies)
        out[spin] = EomGreenFunctions(
            energies=energies,
            omega=sectors[i].omega,
            n_harmonics=n_harmonics,
            dim=dim,
            retarded=gr,
            lesser=gl,
            pair_retarded=g2r,
            pair_lesser=g2l,
        )
    return InteractingSolution(up=out["up"], down=out["down"])


def solve_interacting_static(h, leads, u, occupations, energies):
    """Static interacting retarded and lesser functions per spin.

    h may be a hermitian matrix, a FourierHamiltonian with a single block,
    or a static SpinfulModel (whose hubbard_u fills in when u is None).
    occupations are the opposite-spin inputs: a scalar, one row per
    orbital, a (2, d) array ordered (up, down), or an up/down dict.
    """
    sectors = _static_sectors(h)
    return _solve_pair(sectors, leads, h, u, occupations, 0, energies)


def solve_interacting_floquet(model, leads, u, n_harmonics, occupations, energies):
    """Floquet interacting retarded and lesser block matrices per spin.

    Same closure as the static solver with the charging and occupation
    matrices replicated over the diagonal Fourier blocks; at u = 0 the
    retarded output equals the non-interacting full-matrix resolvent.
    """
    sectors = _sector_pair(model)
    return _solve_pair(sectors, leads, model, u, occupations, n_harmonics, energies)


# ---------------------------------------------------------------- averaging

def static_support_grid(h, leads, u=None, step=None, tail=1e-3,
                        mu_lo=None, mu_hi=None):
    """Real-axis grid for N = 0 averages, symmetric about the window center.

    The window covers the lead potentials and the dot poles, eigenvalues
    of h and their charging-shifted partners, padded by 25 kT + 10 Gamma
    plus a Lorentzian-tail allowance.  A level of total width Gamma keeps
    roughly Gamma / (2 pi D) of its weight beyond distance D, so the tail
    pad is Gamma_tot / (2 pi tail); occupations computed on the default
    window are exact to about `tail` in absolute terms.  Points are placed
    symmetrically about the center, so a particle-hole symmetric problem
    integrates to occupations of exactly one half.
    """
    if isinstance(h, SpinfulModel):
        h = h.up
    h0 = h.block(0) if isinstance(h, FourierHamiltonian) else np.asarray(h)
    evs = np.linalg.eigvalsh(h0)
    shift = 0.0 if u is None else float(np.max(u))
    mus = [l.mu for l in leads]
    if mu_lo is not None:
        mus.append(float(mu_lo))
    if mu_hi is not None:
        mus.append(float(mu_hi))
    kt = max(l.kT for l in leads)
    gval = float(np.linalg.eigvalsh(gamma_total(leads)).max())
    if step is None:
        candidates = [kt / 10.0]
        if gval > 0.0:
            candidates.append(gval / 20.0)
        step = min(candidates)
    if not tail > 0.0:
        raise ValueError("tail must be positive")
    lo = min(min(mus), float(evs.min()))
    hi = max(max(mus), float(evs.max()) + shift)
    pad = 25.0 * kt + 10.0 * gval + gval / (2.0 * np.pi * tail)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) + pad
    k = int(np.ceil(half / step))
    pts = center + step * np.arange(-k, k + 1)
    omega = float(h.omega) if isinstance(h, FourierHamiltonian) else 0.0
    return QuasiEnergyGrid(points=pts, step=step, omega=omega, kind="window")


def _default_grid(sector, leads, n_harmonics, uvec):
    if n_harmonics == 0:
        return static_support_grid(sector, leads, u=uvec)
    return bounded_grid(sector.omega, leads=leads)


def _orbital_occupations(sol: EomGreenFunctions, weights):
    """Period-averaged occupation per orbital: m-summed diagonal of G^<."""
    ne = sol.energies.size
    nb = 2 * sol.n_harmonics + 1
    diag = sol.lesser.diagonal(axis1=-2, axis2=-1).reshape(ne, nb, sol.dim)
    vals = weights @ (-1j * diag.sum(axis=1)) / (2.0 * np.pi)
    return vals.real


def _lead_current(sol: EomGreenFunctions, leads, li, grid):
    """Average current of one spin into lead li, full-matrix trace form."""
    nb = 2 * sol.n_harmonics + 1
    d = sol.dim
    ne = grid.points.size
    shifted = _harmonic_shifts(grid.points, sol.omega, sol.n_harmonics)
    f = leads[li].occupation(shifted)
    gam = np.asarray(leads[li].gamma)
    g = sol.retarded.reshape(ne, nb, d, nb, d)
    diag_blocks = np.einsum("emimj->emij", g)
    tr_rg = np.einsum("emij,ji->em", diag_blocks, gam)
    term1 = -2.0 * np.einsum("em,em->e", f, tr_rg.imag)
    gam_f = np.kron(np.eye(nb), gam)
    tr_lg = np.einsum("eij,ji->e", sol.lesser, gam_f)
    term2 = -tr_lg.imag
    return float(grid.weights @ (term1 + term2) / (2.0 * np.pi))


@dataclass(frozen=True)
class SpinResolvedResult:
    """Spin-resolved period-averaged observables.

    Currents follow the order of the lead list that produced them.  With
    real driving and spin-symmetric parameters the two spin rows coincide;
    a spin-conjugated circular drive is allowed to split them.
    """

    number_up: float
    number_down: float
    occupations_up: np.ndarray
    occupations_down: np.ndarray
    current_up: np.ndarray
    current_down: np.ndarray

    @property
    def number(self):
        return self.number_up + self.number_down

    @property
    def current(self):
        return self.current_up + self.current_down

    @property
    def occupations(self):
        """(2, d) stack of the per-orbital occupations, ordered (up, down)."""
        return np.array([self.occupations_up, self.occupations_down])


def _averages(sol: InteractingSolution, leads, grid):
    rows = {}
    for spin in SPINS:
        s = sol.sector(spin)
        occ = _orbital_occupations(s, grid.weights)
        cur = np.array([_lead_current(s, leads, li, grid)
                        for li in range(len(leads))])
        rows[spin] = (occ, cur)
    return SpinResolvedResult(
        number_up=float(rows["up"][0].sum()),
        number_down=float(rows["down"][0].sum()),
        occupations_up=rows["up"][0],
        occupations_down=rows["down"][0],
        current_up=rows["up"][1],
        current_down=rows["down"][1],
    )


def spin_resolved_averages(model, leads, n_harmonics, occupations=0.5, u=None,
                           grid=None):
    """Solve once and average everything both spins carry.

    Returns numbers, per-orbital occupations, and per-lead currents.  The
    default grid is the quasi-energy panel for Floquet runs and the
    symmetric support window for N = 0.
    """
    sectors = _sector_pair(model)
    uvec = _charging_vector(u, model, sectors[0].dim)
    if grid is None:
        grid = _default_grid(sectors[0], leads, n_harmonics, uvec)
    sol = _solve_pair(sectors, leads, model, uvec, occupations, n_harmonics,
                      grid.points)
    return _averages(sol, leads, grid)


def avg_number_finegf(model, leads, n_harmonics, occupations=0.5, u=None,
                      grid=None):
    """Period-averaged total charge, both spins."""
    return spin_resolved_averages(model, leads, n_harmonics, occupations,
                                  u=u, grid=grid).number


def avg_current_finegf(model, leads, lead, n_harmonics, occupations=0.5,
                       u=None, grid=None):
    """Period-averaged current into the dot from one lead, both spins."""
    res = spin_resolved_averages(model, leads, n_harmonics, occupations,
                                 u=u, grid=grid)
    return float(res.current[_lead_index(leads, lead)])


# ------------------------------------------------------------ self-consistency

@dataclass(frozen=True)
class SelfConsistentResult:
    """Fixed point of the occupation map.

    occupations is the raw map output at convergence, shape (2, d) ordered
    (up, down).  observables come from the same final solve, so their
    occupation fields equal `occupations` exactly.  history stacks the
    accepted iterates from the initial guess to the converged output.
    """

    occupations: np.ndarray
    iterations: int
    residual: float
    history: np.ndarray
    observables: SpinResolvedResult


def _check_occupation_range(occ):
    slack = 1e-10
    if np.any(occ < -slack) or np.any(occ > 1.0 + slack):
        raise RuntimeError(
            "occupation integral left [0, 1]; the quadrature window is too "
            f"narrow or too coarse (got {occ.min():.6g} .. {occ.max():.6g})"
        )


def self_consistent_occupations(model, leads, u=None, n_harmonics=0,
                                config=None, grid=None, start=None):
    """Iterate the occupation map of the interacting solver to a fixed point.

    One iteration solves both spin sectors from the current occupations,
    cross-feeding each against the opposite spin, and reads back the
    period-averaged orbital occupations.  The raw map output counts as
    converged once it deviates from its input by less than config.occ_tol
    everywhere; otherwise the iterate moves toward it by config.mixing.
    With every u_i = 0 the occupations never enter the resolvents, so a
    single evaluation is already the fixed point and the reported
    iteration count is one.
    """
    if config is None:
        config = InteractingConfig(mode="self-consistent")
    if config.mode != "self-consistent":
        raise ValueError(
            "config.mode must be 'self-consistent' for the occupation iteration"
        )
    sectors = _sector_pair(model)
    dim = sectors[0].dim
    uvec = _charging_vector(u, model, dim)
    if grid is None:
        grid = _default_grid(sectors[0], leads, n_harmonics, uvec)
    n = _occupation_matrix(0.5 if start is None else start, dim)

    def evaluate(occ):
        sol = _solve_pair(sectors, leads, model, uvec, occ, n_harmonics,
                          grid.points)
        return _averages(sol, leads, grid)

    if not np.any(uvec):
        res = evaluate(n)
        raw = res.occupations
        _check_occupation_range(raw)
        return SelfConsistentResult(
            occupations=raw, iterations=1, residual=0.0,
            history=np.array([n, raw]), observables=res,
        )

    history = [n]
    residual = np.inf
    for it in range(1, config.max_iter + 1):
        res = evaluate(n)
        raw = res.occupations
        _check_occupation_range(raw)
        residual = float(np.max(np.abs(raw - n)))
        if residual < config.occ_tol:
            return SelfConsistentResult(
                occupations=raw, iterations=it, residual=residual,
                history=np.array(history + [raw]), observables=res,
            )
        n = (1.0 - config.mixing) * n + config.mixing * raw
        history.append(n)
    raise ConvergenceError(
        f"occupations not converged after {config.max_iter} iterations; "
        f"last residual {residual:.3e} exceeds occ_tol {config.occ_tol:.3e}",
        residual=residual,
        iterations=config.max_iter,
    )


def interacting_averages(model, leads, n_harmonics, config=None, u=None,
                         grid=None):
    """Observable dispatch on config.mode.

    fixed-half solves once at half filling; self-consistent returns the
    observables of the converged fixed point.
    """
    config = InteractingConfig() if config is None else config
    if config.mode == "fixed-half":
        return spin_resolved_averages(model, leads, n_harmonics, 0.5, u=u,
                                      grid=grid)
    return self_consistent_occupations(
        model, leads, u=u, n_harmonics=n_harmonics, config=config, grid=grid
    ).observables
