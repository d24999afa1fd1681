"""Non-interacting Floquet NEGF solvers.

Two formulations of the same resolvent. The sideband-column solver keeps
one block column of (E I^F - h^F - Sigma^rF)^(-1) and integrates over a
wide energy window; the full-matrix solver keeps every block and packs
the whole spectrum into a single quasi-energy panel [0, omega). With the
grid step dividing omega exactly, the two quadratures sample identical
physical energies and trace observables agree far below the quadrature
error.

Quasi-energy points are independent: solvers run as batched per-point
kernels, and averages reduce them in fixed grid order, so results are
deterministic regardless of how the batch is scheduled.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

from .floquet_matrix import (
    bounded_grid,
    build_floquet_hamiltonian,
    floquet_sigma_retarded,
    window_grid,
)
from .model import FourierHamiltonian, Lead, SpinfulModel, fermi

__all__ = [
    "VnegfSolution",
    "MnegfSolution",
    "solve_vnegf",
    "solve_mnegf",
    "lesser_central_vnegf",
    "lesser_mnegf",
    "avg_number_vnegf",
    "avg_current_vnegf",
    "avg_number_mnegf",
    "avg_current_mnegf",
    "transmission_mnegf",
    "landauer_current_mnegf",
    "NegfSweepKernel",
]

_EDGE_FRACTION = 1e-8


def _lead_index(leads, lead):
    if isinstance(lead, (int, np.integer)):
        if not 0 <= lead < len(leads):
            raise ValueError(f"lead index {lead} out of range")
        return int(lead)
    if isinstance(lead, Lead):
        for i, l in enumerate(leads):
            if l is lead:
                return i
        raise ValueError("lead object not in lead list")
    names = [l.name for l in leads]
    if names.count(lead) != 1:
        raise ValueError(f"lead name {lead!r} not unique among {names}")
    return names.index(lead)


def m_matrix(model: FourierHamiltonian, leads, n_harmonics, energies):
    """Stack of E I^F - h^F - Sigma^rF over the given energies."""
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    hf = build_floquet_hamiltonian(model, n_harmonics).data
    core = -(hf + floquet_sigma_retarded(leads, n_harmonics))
    eye = np.eye(core.shape[0])
    return energies[:, None, None] * eye + core


def _harmonic_shifts(energies, omega, n_harmonics):
    m = np.arange(-n_harmonics, n_harmonics + 1)
    return np.asarray(energies)[:, None] + omega * m


def _lesser_block_factors(leads, shifted):
    """i sum_l f_l(E+m.omega) Gamma_l as an (nE, 2N+1, d, d) stack."""
    d = leads[0].dim
    out = np.zeros(shifted.shape + (d, d), dtype=complex)
    for l in leads:
        out += 1j * np.multiply.outer(l.occupation(shifted), np.asarray(l.gamma))
    return out


# ------------------------------------------------------- sideband-column form

@dataclass(frozen=True)
class VnegfSolution:
    """Central block column g^r_m(E) = [M^(-1)]_{m0} on an energy batch."""

    energies: np.ndarray
    omega: float
    n_harmonics: int
    sidebands: np.ndarray  # (nE, 2N+1, d, d)

    @property
    def dim(self):
        return self.sidebands.shape[-1]

    def block(self, m):
        if abs(m) > self.n_harmonics:
            raise IndexError(f"sideband index {m} outside [-N, N]")
        return self.sidebands[:, m + self.n_harmonics]


def solve_vnegf(model, leads, n_harmonics, energies):
    """Solve for the central block column of the Floquet resolvent.

    One linear solve with d right-hand sides per energy; the full
    inverse is never formed.
    """
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    d = model.dim
    nb = 2 * n_harmonics + 1
    mm = m_matrix(model, leads, n_harmonics, energies)
    rhs = np.zeros((nb * d, d), dtype=complex)
    rhs[n_harmonics * d:(n_harmonics + 1) * d] = np.eye(d)
    cols = np.linalg.solve(mm, rhs)
    sidebands = cols.reshape(energies.size, nb, d, d)
    return VnegfSolution(
        energies=energies,
        omega=model.omega,
        n_harmonics=n_harmonics,
        sidebands=sidebands,
    )


def lesser_central_vnegf(solution: VnegfSolution, leads):
    """Central lesser block g^<_0(E) = sum_m g^r_m(E) S^<(E+m.omega) g^r_m(E)^+ .

    Anti-hermitian with -i g^<_0 positive semidefinite.
    """
    shifted = _harmonic_shifts(solution.energies, solution.omega, solution.n_harmonics)
    sig = _lesser_block_factors(leads, shifted)
    g = solution.sidebands
    return np.einsum("emij,emjk,emlk->eil", g, sig, g.conj(), optimize=True)


def _edge_check(integrand, what):
    peak = np.max(np.abs(integrand))
    if peak == 0.0:
        return
    edge = max(abs(integrand[0]), abs(integrand[-1]))
    if edge > _EDGE_FRACTION * peak:
        warnings.warn(
            f"{what}: integrand at window edges is {edge / peak:.1e} of peak; "
            "widen the energy window",
            stacklevel=3,
        )


def avg_number_vnegf(model, leads, n_harmonics, grid=None):
    """Period-averaged particle number from the central lesser block."""
    if grid is None:
        grid = window_grid(leads, model.omega, n_harmonics)
    sol = solve_vnegf(model, leads, n_harmonics, grid.points)
    less = lesser_central_vnegf(sol, leads)
    integrand = -1j * np.trace(less, axis1=-2, axis2=-1)
    _edge_check(integrand, "avg_number_vnegf")
    val = grid.weights @ integrand / (2.0 * np.pi)
    return float(val.real)


def avg_current_vnegf(model, leads, lead, n_harmonics, grid=None):
    """Period-averaged current from lead into dot.

    Integrand 2 Re Tr[g^r_0 S^<_l + g^<_0 S^a_l] with the wide-band lead
    objects S^<_l = i f_l Gamma_l and S^a_l = (i/2) Gamma_l.
    """
    if grid is None:
        grid = window_grid(leads, model.omega, n_harmonics)
    li = _lead_index(leads, lead)
    gam = np.asarray(leads[li].gamma)
    sol = solve_vnegf(model, leads, n_harmonics, grid.points)
    less = lesser_central_vnegf(sol, leads)
    f = leads[li].occupation(grid.points)
    tr_rg = np.einsum("eij,ji->e", sol.block(0), gam)
    tr_lg = np.einsum("eij,ji->e", less, gam)
    integrand = -2.0 * f * tr_rg.imag - tr_lg.imag
    _edge_check(integrand, "avg_current_vnegf")
    return float(grid.weights @ integrand / (2.0 * np.pi))


# ----------------------------------------------------------- full-matrix form

@dataclass(frozen=True)
class MnegfSolution:
    """Full Floquet resolvent G^rF(E) on a quasi-energy batch."""

    energies: np.ndarray
    omega: float
    n_harmonics: int
    dim: int
    retarded: np.ndarray  # (nE, F, F) with F = (2N+1) d

    @property
    def blocks(self):
        """View shaped (nE, 2N+1, 2N+1, d, d), harmonic indices first."""
        n = self.energies.size
        nb = 2 * self.n_harmonics + 1
        d = self.dim
        return self.retarded.reshape(n, nb, d, nb, d).transpose(0, 1, 3, 2, 4)

    def block(self, m, n):
        return self.blocks[:, m + self.n_harmonics, n + self.n_harmonics]


def solve_mnegf(model, leads, n_harmonics, energies):
    """Invert the full Floquet matrix, all sideband blocks at once."""
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    mm = m_matrix(model, leads, n_harmonics, energies)
    return MnegfSolution(
        energies=energies,
        omega=model.omega,
        n_harmonics=n_harmonics,
        dim=model.dim,
        retarded=np.linalg.inv(mm),
    )


def lesser_mnegf(solution: MnegfSolution, leads):
    """G^<F = G^rF Sigma^<F G^rF+ with the block-shifted lead occupations."""
    nb = 2 * solution.n_harmonics + 1
    d = solution.dim
    shifted = _harmonic_shifts(solution.energies, solution.omega, solution.n_harmonics)
    sig = _lesser_block_factors(leads, shifted)
    g = solution.retarded.reshape(solution.energies.size, nb, d, nb, d)
    gs = np.einsum("eimnj,enjk->eimnk", g, sig, optimize=True)
    out = np.einsum("eimnk,elpnk->eimlp", gs, g.conj(), optimize=True)
    f = nb * d
    return out.reshape(solution.energies.size, f, f)


def avg_number_mnegf(model, leads, n_harmonics, grid=None):
    """Period-averaged number: all diagonal blocks, one panel [0, omega)."""
    if grid is None:
        grid = bounded_grid(model.omega, leads=leads)
    sol = solve_mnegf(model, leads, n_harmonics, grid.points)
    less = lesser_mnegf(sol, leads)
    integrand = -1j * np.trace(less, axis1=-2, axis2=-1)
    val = grid.weights @ integrand / (2.0 * np.pi)
    return float(val.real)


def _resolved_transmission(solution: MnegfSolution, leads, drain, drain_gamma=None):
    """T^{ll'}_{mn}(E) = tr[Gamma_l G_mn Gamma_l' G_mn+] for one drain l.

    Returns (n_leads, nE, 2N+1, 2N+1); entry l' holds the sideband-resolved
    transmission from lead l' into `drain`.
    """
    blocks = solution.blocks
    gl = np.asarray(leads[drain].gamma) if drain_gamma is None else drain_gamma
    left = np.einsum("ij,emnjk->emnik", gl, blocks, optimize=True)
    out = np.empty((len(leads),) + blocks.shape[:3])
    for i, l in enumerate(leads):
        t = np.einsum(
            "emnik,kl,emnil->emn", left, np.asarray(l.gamma), blocks.conj(), optimize=True
        )
        out[i] = t.real
    return out


def avg_current_mnegf(model, leads, lead, n_harmonics, grid=None):
    """Period-averaged current into the dot, full-matrix form.

    Same trace structure as the sideband-column current but over the whole
    Floquet space on the bounded panel.
    """
    if grid is None:
        grid = bounded_grid(model.omega, leads=leads)
    li = _lead_index(leads, lead)
    sol = solve_mnegf(model, leads, n_harmonics, grid.points)
    less = lesser_mnegf(sol, leads)
    nb = 2 * n_harmonics + 1
    d = model.dim
    shifted = _harmonic_shifts(grid.points, model.omega, n_harmonics)
    f = leads[li].occupation(shifted)
    gam = np.asarray(leads[li].gamma)
    g = sol.retarded.reshape(grid.points.size, nb, d, nb, d)
    # 2 Re Tr[G^rF Sigma^<F_l]: only the block diagonal of Sigma contributes.
    diag_blocks = np.einsum("emimj->emij", g)
    tr_rg = np.einsum("emij,ji->em", diag_blocks, gam)
    term1 = -2.0 * np.einsum("em,em->e", f, tr_rg.imag)
    lf = nb * d
    gam_f = np.kron(np.eye(nb), gam)
    tr_lg = np.einsum("eij,ji->e", less.reshape(grid.points.size, lf, lf), gam_f)
    term2 = -tr_lg.imag
    return float(grid.weights @ (term1 + term2) / (2.0 * np.pi))


def _reject_interacting(model):
    if isinstance(model, SpinfulModel):
        if np.any(np.asarray(model.hubbard_u) > 0.0):
            raise ValueError(
                "the Landauer form has no interacting analog; use the "
                "interacting solvers' current averages instead"
            )
        raise ValueError(
            "pass one spin sector (model.up or model.down) for a "
            "non-interacting spinful model"
        )


def transmission_mnegf(model, leads, n_harmonics, energies, drain="L", source=None,
                       resolved=False):
    """Landauer-like transmission through the driven dot.

    Scalar form traces over the whole Floquet space,
    T(E) = Tr[Gamma^F_drain G^rF Gamma^F_source G^rF+], nonnegative.
    resolved=True keeps the sideband pair indices (nE, 2N+1, 2N+1); entry
    (m, n) couples drain energy E+m.omega to source energy E+n.omega.

    Restricted to two leads; the Landauer form has no interacting analog.
    """
    _reject_interacting(model)
    if len(leads) != 2:
        raise ValueError("transmission is defined for exactly two leads")
    di = _lead_index(leads, drain)
    si = 1 - di if source is None else _lead_index(leads, source)
    if si == di:
        raise ValueError("source and drain must differ")
    sol = solve_mnegf(model, leads, n_harmonics, energies)
    t = _resolved_transmission(sol, leads, di)[si]
    return t if resolved else t.sum(axis=(1, 2))


def landauer_current_mnegf(model, leads, lead, n_harmonics, grid=None):
    """Sideband-resolved Landauer current.

    J_l = sum_l' int_0^w dE/2pi sum_mn T^{ll'}_{mn}(E)
          [f_l(E+m.omega) - f_l'(E+n.omega)].
    Conserves charge across leads pointwise in E.
    """
    _reject_interacting(model)
    if grid is None:
        grid = bounded_grid(model.omega, leads=leads)
    li = _lead_index(leads, lead)
    sol = solve_mnegf(model, leads, n_harmonics, grid.points)
    t = _resolved_transmission(sol, leads, li)
    shifted = _harmonic_shifts(grid.points, model.omega, n_harmonics)
    f_l = leads[li].occupation(shifted)
    total = 0.0
    for i, l in enumerate(leads):
        f_src = l.occupation(shifted)
        total += np.einsum("emn,em->e", t[i], f_l) - np.einsum("emn,en->e", t[i], f_src)
    return float(grid.weights @ total / (2.0 * np.pi))


# ------------------------------------------------------------- sweep kernels

def _fermi_weighted_pole_pair(a, b, mu, kT):
    """Exact integral of f(E) [1/(E - a) - 1/(E - b)] over the real line.

    Requires Im a < 0 < Im b (a retarded pole paired with an advanced
    one); closing the bracket makes the integrand fall off as 1/E^2, so
    the integral converges without any band cutoff.  Summing the Fermi
    function's Matsubara poles gives digamma differences whose arguments
    sit in the right half plane for either sign of E - mu, stable for
    arbitrarily small broadening.
    """
    scale = 1j / (2.0 * np.pi * kT)
    return (digamma(0.5 + scale * (a - mu)) - digamma(0.5 - scale * (b - mu))
            - 1j * np.pi)


class StaticPoleAverages:
    """Grid-free averages for an undriven dot in the wide-band limit.

    With constant level-width matrices the retarded resolvent is a finite
    sum of simple poles at the eigenvalues of h - i Gamma_tot / 2, and the
    occupation and current integrals reduce to digamma closed forms.  No
    energy window enters, so there is no truncation tail; accuracy is set
    by the eigendecomposition alone.
    """

    def __init__(self, model, leads, sweep_index):
        _reject_interacting(model)
        if model.cutoff != 0:
            raise ValueError(
                "pole-expansion averages need an undriven model; "
                "a driven one has no single resolvent pole set"
            )
        self.leads = list(leads)
        self.sweep_index = sweep_index
        gammas = [np.asarray(l.gamma, dtype=complex) for l in self.leads]
        heff = np.asarray(model.block(0), dtype=complex) - 0.5j * sum(gammas)
        lam, vec = np.linalg.eig(heff)
        if np.abs(lam.imag).min() <= 0.0:
            raise ValueError("every level must acquire a lead broadening")
        vinv = np.linalg.inv(vec)
        proj = [np.outer(vec[:, k], vinv[k]) for k in range(lam.size)]
        self.lam = lam
        d = lam.size
        nl = len(self.leads)
        # number_w[l', k, m] = tr[P_k Gamma_l' P_m+],
        # trans_w[l, l', k, m] = tr[Gamma_l P_k Gamma_l' P_m+]
        self.number_w = np.empty((nl, d, d), dtype=complex)
        self.trans_w = np.empty((nl, nl, d, d), dtype=complex)
        for lp, gp in enumerate(gammas):
            for k in range(d):
                for m in range(d):
                    core = proj[k] @ gp @ proj[m].conj().T
                    self.number_w[lp, k, m] = np.trace(core)
                    for l, gl in enumerate(gammas):
                        self.trans_w[l, lp, k, m] = np.trace(gl @ core)

    def _pair_integrals(self, mu_values):
        """I[l, p, k, m] = int f_l [(E-lam_k)^-1 - (E-lam_m*)^-1] / (lam_k - lam_m*).

        Lead l uses its own temperature; the swept lead takes the running
        chemical potential, the others their fixed one.
        """
        a = self.lam[None, :, None]
        b = np.conj(self.lam)[None, None, :]
        out = np.empty((len(self.leads), mu_values.size) + (self.lam.size,) * 2,
                       dtype=complex)
        for i, l in enumerate(self.leads):
            mu = mu_values if i == self.sweep_index else np.full(1, l.mu)
            vals = _fermi_weighted_pole_pair(a, b, mu[:, None, None], l.kT)
            out[i] = np.broadcast_to(vals / (a - b), out[i].shape)
        return out

    def number(self, mu_values):
        scalar = np.isscalar(mu_values)
        mus = np.atleast_1d(np.asarray(mu_values, dtype=float))
        iv = self._pair_integrals(mus)
        out = np.einsum("lkm,lpkm->p", self.number_w, iv).real / (2.0 * np.pi)
        return float(out[0]) if scalar else out

    def current(self, lead, mu_values):
        scalar = np.isscalar(mu_values)
        mus = np.atleast_1d(np.asarray(mu_values, dtype=float))
        li = _lead_index(self.leads, lead)
        iv = self._pair_integrals(mus)
        out = np.einsum("skm,spkm->p", self.trans_w[li],
                        iv[li][None] - iv).real / (2.0 * np.pi)
        return float(out[0]) if scalar else out


class NegfSweepKernel:
    """Bias-sweep evaluator with the resolvent work hoisted out of the loop.

    The retarded quantities do not depend on lead chemical potentials, and
    every average is linear in the lead occupations, so a sweep reduces to
    precomputed coefficient vectors on one physical energy axis dotted with
    Fermi functions. Exact for the same grid: matches the one-shot
    averages to rounding.

    With no sidebands kept (undriven model) the quadrature is skipped
    entirely in favour of the pole expansion, which has no window tail.
    """

    def __init__(self, model, leads, n_harmonics, sweep_lead="L",
                 mu_lo=None, mu_hi=None, method="vnegf", step=None):
        if method not in ("vnegf", "mnegf"):
            raise ValueError(f"unknown method {method!r}")
        self.model = model
        self.leads = list(leads)
        self.n_harmonics = int(n_harmonics)
        self.method = method
        self.sweep_index = _lead_index(self.leads, sweep_lead)
        if self.n_harmonics == 0:
            self._static = StaticPoleAverages(model, self.leads, self.sweep_index)
            return
        self._static = None
        omega = model.omega
        if method == "vnegf":
            self.grid = window_grid(self.leads, omega, self.n_harmonics,
                                    step=step, mu_lo=mu_lo, mu_hi=mu_hi)
        else:
            vstep = window_grid(self.leads, omega, self.n_harmonics, step=step).step
            self.grid = bounded_grid(omega, step=vstep)
        self._build()

    # axis bookkeeping: the step divides omega, so E + m.omega lands a fixed
    # integer stride from E on the extended axis.

    def _build(self):
        n = self.n_harmonics
        nb = 2 * n + 1
        w = self.grid.weights
        pts = self.grid.points
        stride = int(round(self.grid.omega / self.grid.step))
        k0 = int(round(pts[0] / self.grid.step))
        self.axis = self.grid.step * np.arange(k0 - n * stride,
                                               k0 + pts.size + n * stride)
        na = self.axis.size
        nl = len(self.leads)
        # number_coef[l'] on axis; current terms: own_coef[l] on axis multiplies
        # f_l, cross_coef[l, l'] multiplies -f_l'.
        self.number_coef = np.zeros((nl, na))
        self.own_coef = np.zeros((nl, na))
        self.cross_coef = np.zeros((nl, nl, na))
        gammas = [np.asarray(l.gamma) for l in self.leads]

        if self.method == "vnegf":
            sol = solve_vnegf(self.model, self.leads, self.n_harmonics, pts)
            sb = sol.sidebands
            for lp, gp in enumerate(gammas):
                # tr[g_m Gamma_l' g_m+] and tr[g_m Gamma_l' g_m+ Gamma_l]
                gg = np.einsum("emij,jk,emlk->emil", sb, gp, sb.conj(), optimize=True)
                spectral = np.einsum("emii->em", gg).real
                for m in range(nb):
                    sl = slice(m * stride, m * stride + pts.size)
                    self.number_coef[lp, sl] += w * spectral[:, m]
                for l, gl in enumerate(gammas):
                    cross = np.einsum("emil,li->em", gg, gl).real
                    for m in range(nb):
                        sl = slice(m * stride, m * stride + pts.size)
                        self.cross_coef[l, lp, sl] += w * cross[:, m]
            base = slice(n * stride, n * stride + pts.size)
            for l, gl in enumerate(gammas):
                tr_rg = np.einsum("eij,ji->e", sol.block(0), gl)
                self.own_coef[l, base] += -2.0 * w * tr_rg.imag
        else:
            sol = solve_mnegf(self.model, self.leads, self.n_harmonics, pts)
            blocks = sol.blocks
            for lp, gp in enumerate(gammas):
                # spectral weight per drain row m with source column summed
                gg = np.einsum("emnij,jk,emnlk->emnil", blocks, gp, blocks.conj(),
                               optimize=True)
                spectral = np.einsum("emnii->emn", gg).real
                col_sum = spectral.sum(axis=1)  # f sits at the source column energy
                for k in range(nb):
                    sl = slice(k * stride, k * stride + pts.size)
                    self.number_coef[lp, sl] += w * col_sum[:, k]
                for l, gl in enumerate(gammas):
                    t_ll = np.einsum("emnil,li->emn", gg, gl).real  # T^{ll'}_{mn}
                    t_own = t_ll.sum(axis=2)   # coefficient of f_l(E+m.omega)
                    t_src = t_ll.sum(axis=1)   # coefficient of f_l'(E+n.omega)
                    for m in range(nb):
                        sl = slice(m * stride, m * stride + pts.size)
                        self.own_coef[l, sl] += w * t_own[:, m]
                        self.cross_coef[l, lp, sl] += w * t_src[:, m]

    def _occupations(self, mu_values):
        """Per-lead occupations on the axis, broadcast over sweep points."""
        mu_values = np.atleast_1d(np.asarray(mu_values, dtype=float))
        occ = []
        for i, l in enumerate(self.leads):
            if i == self.sweep_index:
                occ.append(fermi(self.axis[None, :], mu_values[:, None], l.kT))
            else:
                occ.append(np.broadcast_to(l.occupation(self.axis),
                                           (mu_values.size, self.axis.size)))
        return occ

    def number(self, mu_values):
        """Period-averaged particle number at each swept chemical potential."""
        if self._static is not None:
            return self._static.number(mu_values)
        scalar = np.isscalar(mu_values)
        occ = self._occupations(mu_values)
        out = sum(occ[i] @ self.number_coef[i] for i in range(len(self.leads)))
        out = out / (2.0 * np.pi)
        return float(out[0]) if scalar else out

    def current(self, lead, mu_values):
        """Period-averaged current from `lead` at each swept potential."""
        if self._static is not None:
            return self._static.current(lead, mu_values)
        scalar = np.isscalar(mu_values)
        li = _lead_index(self.leads, lead)
        occ = self._occupations(mu_values)
        out = occ[li] @ self.own_coef[li]
        for lp in range(len(self.leads)):
            out = out - occ[lp] @ self.cross_coef[li, lp]
        out = out / (2.0 * np.pi)
        return float(out[0]) if scalar else out
