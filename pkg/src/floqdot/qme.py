"""Driven-dot quantum master equations in two equivalent constructions.

The generator is the lowest-order expansion in the dot-lead coupling around
the exact driven dynamics of the isolated dot.  Lead occupation factors are
evaluated at quasi-energy differences of the driven many-body spectrum, so
every jump operator gets dressed through the eigenbasis of the
harmonic-block Hamiltonian before it enters the dissipator.

Two routes to the same steady physics:

* ``HilbertSpaceQme`` keeps the density matrix on the 2^M Fock states and
  carries time-periodic dissipators.  The generator is a short harmonic
  series, so its value at any instant is a phase-weighted sum of
  precomputed superoperator components.
* ``FloquetSpaceQme`` lifts the density matrix to the harmonic-extended
  space where the generator is constant in time.  Physical observables are
  recovered by projecting the extended state back with harmonic phases.

Every term built here moves bra and ket charge sectors together, so states
that start block-diagonal in the conserved occupations stay so.  All
propagation therefore runs on the compressed pair basis (``PairBasis``).
One-period propagators and exact trapezoid period averages are compiled
into small dense maps once per parameter point; steady-state detection then
costs one matrix-vector product per period.
"""

from dataclasses import dataclass, field

import warnings

import numpy as np

from .fock import (
    ladder_operators,
    many_body_model,
    occupation_counts,
    spin_orbital_index,
)
from .floquet_matrix import build_floquet_hamiltonian, fourier_number
from .model import FourierHamiltonian, SpinfulModel

__all__ = [
    "FloquetEigen",
    "floquet_eigen",
    "PairBasis",
    "DressedDissipator",
    "SteadyAverages",
    "SteadyStateError",
    "QmeTrajectory",
    "HilbertSpaceQme",
    "FloquetSpaceQme",
    "rk4_evolve",
]

_DEFAULT_STEPS = 2000
_DEFAULT_TOL = 1e-7
_DEFAULT_MAX_PERIODS = 5000
_CONSECUTIVE = 3
_IMAG_TOL = 1e-8


def rk4_evolve(rhs, state, t0, dt, n_steps):
    """Classical fixed-step RK4, returning the stacked trajectory.

    rhs(state, t) must return the time derivative with the same shape as
    state.  The result has shape (n_steps + 1, *state.shape) and starts
    with the initial state.  A non-finite state aborts with the step index.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    y = np.asarray(state, dtype=complex)
    out = np.empty((n_steps + 1,) + y.shape, dtype=complex)
    out[0] = y
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            t = t0 + n * dt
            k1 = rhs(y, t)
            k2 = rhs(y + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = rhs(y + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = rhs(y + dt * k3, t + dt)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise FloatingPointError(f"state became non-finite at step {n + 1}")
            out[n + 1] = y
    return out


@dataclass(frozen=True)
class FloquetEigen:
    """Eigenbasis of a hermitian harmonic-block Hamiltonian.

    energies ascend globally; each eigenvector column has its first
    significant component rotated to the positive real axis, which pins the
    basis deterministically inside degenerate subspaces.
    """

    energies: np.ndarray
    vectors: np.ndarray

    @property
    def omega_matrix(self):
        """Antisymmetric matrix of pairwise energy differences."""
        e = self.energies
        return e[:, None] - e[None, :]


def floquet_eigen(matrix, sector_labels):
    """Sector-wise hermitian eigendecomposition with deterministic phases.

    sector_labels assigns each basis index to a conserved-charge sector;
    the matrix must not couple different sectors.  Diagonalizing per sector
    keeps exact degeneracies between different charges from mixing.
    """
    matrix = np.asarray(matrix)
    size = matrix.shape[0]
    labels = np.asarray(sector_labels)
    if labels.shape != (size,):
        raise ValueError("sector_labels must have one entry per basis state")
    energies = np.empty(size)
    vectors = np.zeros((size, size), dtype=complex)
    col = 0
    for value in np.unique(labels):
        idx = np.flatnonzero(labels == value)
        w, v = np.linalg.eigh(matrix[np.ix_(idx, idx)])
        energies[col : col + idx.size] = w
        vectors[idx, col : col + idx.size] = v
        col += idx.size
    order = np.argsort(energies, kind="stable")
    energies = energies[order]
    vectors = vectors[:, order]
    mags = np.abs(vectors)
    for c in range(size):
        lead = np.flatnonzero(mags[:, c] > 1e-8 * mags[:, c].max())[0]
        pivot = vectors[lead, c]
        vectors[:, c] *= np.conj(pivot) / abs(pivot)
    energies.flags.writeable = False
    vectors.flags.writeable = False
    return FloquetEigen(energies=energies, vectors=vectors)


class PairBasis:
    """Index pairs (a, b) of equal conserved-charge sectors.

    Generators assembled in this module change bra and ket charges
    together, so density matrices with support on these pairs stay on them
    for all times.  compress/expand move between the full matrix and the
    packed pair vector; sandwich builds the superoperator of
    rho -> left @ rho @ right on the packed representation.
    """

    def __init__(self, sector_labels):
        labels = np.asarray(sector_labels)
        self.dim = labels.size
        self.sectors = []
        offsets = []
        rows = []
        cols = []
        off = 0
        for value in np.unique(labels):
            idx = np.flatnonzero(labels == value)
            self.sectors.append(idx)
            offsets.append(off)
            rows.append(np.repeat(idx, idx.size))
            cols.append(np.tile(idx, idx.size))
            off += idx.size * idx.size
        self._offsets = offsets
        self.rows = np.concatenate(rows)
        self.cols = np.concatenate(cols)
        self.size = off

    def compress(self, matrix):
        return np.asarray(matrix)[self.rows, self.cols]

    def expand(self, vec):
        out = np.zeros((self.dim, self.dim), dtype=complex)
        out[self.rows, self.cols] = vec
        return out

    def sandwich(self, left, right):
        """Packed superoperator of rho -> left @ rho @ right."""
        left = np.asarray(left, dtype=complex)
        right = np.asarray(right, dtype=complex)
        out = np.zeros((self.size, self.size), dtype=complex)
        for ia, (idx_a, off_a) in enumerate(zip(self.sectors, self._offsets)):
            na = idx_a.size
            for ib, (idx_b, off_b) in enumerate(zip(self.sectors, self._offsets)):
                nb = idx_b.size
                lblk = left[np.ix_(idx_a, idx_b)]
                if not lblk.any():
                    continue
                rblk = right[np.ix_(idx_b, idx_a)]
                if not rblk.any():
                    continue
                out[off_a : off_a + na * na, off_b : off_b + nb * nb] = np.kron(
                    lblk, rblk.T
                )
        return out


class SteadyStateError(RuntimeError):
    """Raised when period averages fail to settle within max_periods."""

    def __init__(self, residuals):
        self.residuals = np.asarray(residuals)
        last = self.residuals[-1] if self.residuals.size else np.nan
        super().__init__(
            f"no steady state after {self.residuals.size + 1} periods "
            f"(last period-average change {last:.3e})"
        )


@dataclass(frozen=True)
class SteadyAverages:
    """Trapezoid averages over the final period of a converged evolution."""

    number: float
    currents: dict
    spin_currents: dict
    n_periods: int
    residuals: np.ndarray
    state: np.ndarray


@dataclass(frozen=True)
class QmeTrajectory:
    """Sampled observables along one propagation.

    imag_residue holds the largest imaginary magnitude discarded from any
    observable at each sample.  It sits at round-off for the physical-space
    construction; the extended construction's column readout carries a
    residue on the scale of its transient ringing until dissipation aligns
    the harmonic blocks.
    """

    times: np.ndarray
    number: np.ndarray
    currents: dict
    state: np.ndarray
    imag_residue: np.ndarray


@dataclass(frozen=True)
class DressedDissipator:
    """Occupation-weighted jump operators of one lead.

    creation_components[j] maps harmonic index k to the 2^M square matrix
    C_jk; the in-scattering operator at time t is the phase-weighted sum
    over k.  Out-scattering follows from the exact complement identity
    d_j - (in-scattering at t) adjoint, because the in and out occupation
    weights sum to one at every transition energy.
    """

    omega: float
    creation_components: tuple
    bare: tuple

    def creation_in_at(self, orbital, t):
        total = np.zeros_like(self.bare[orbital], dtype=complex)
        for k, c in self.creation_components[orbital].items():
            total = total + (c if k == 0 else np.exp(1j * k * self.omega * t) * c)
        return total

    def annihilation_out_at(self, orbital, t):
        return self.bare[orbital] - self.creation_in_at(orbital, t).conj().T


class _HarmonicSuperop:
    """Matrix family L(t) = sum_k exp(i k omega t) L_k on a pair basis."""

    def __init__(self, components, omega, size):
        self.omega = omega
        self.size = size
        scale = max((np.abs(v).max() for v in components.values()), default=0.0)
        self.components = {
            int(k): v
            for k, v in components.items()
            if np.abs(v).max() > 1e-15 * scale
        }

    @property
    def is_constant(self):
        return set(self.components) <= {0}

    def at(self, t):
        out = np.zeros((self.size, self.size), dtype=complex)
        for k, v in self.components.items():
            if k == 0:
                out += v
            else:
                out += np.exp(1j * k * self.omega * t) * v
        return out


def _acc(table, key, value):
    if key in table:
        table[key] = table[key] + value
    else:
        table[key] = value


def _poly_step(lmat, dt):
    """Single RK4 step map of a constant generator, exactly the quartic
    Taylor polynomial of exp(dt L)."""
    size = lmat.shape[0]
    eye = np.eye(size, dtype=complex)
    s = eye + (dt / 4.0) * lmat
    s = eye + (dt / 3.0) * (lmat @ s)
    s = eye + (dt / 2.0) * (lmat @ s)
    return eye + dt * (lmat @ s)


def _compile_period(op, dt, steps, row_fun, n_rows):
    """One-period propagator plus compiled period-average functionals.

    Returns (phi, avg_rows) with avg_rows shaped (n_rows, size): the product
    avg_rows @ v equals the trapezoid average over one period of the
    instantaneous functionals row_fun(t) applied to the trajectory that
    starts at v.  The per-step maps are exact RK4 step maps, so compiled
    results match explicit stepping to round-off.
    """
    period = dt * steps
    if op.is_constant:
        # the averaging quadrature can ride a coarser grid than the step map:
        # 250 trapezoid nodes per period already resolve the harmonic content
        # of the observables to round-off, while the row products dominate
        # the compile cost on large extended bases
        astride = max(1, steps // 250)
        while steps % astride:
            astride -= 1
        coarse = np.linalg.matrix_power(_poly_step(op.at(0.0), dt), astride)
        nodes = steps // astride
        ha = astride * dt
        acc = (0.5 * ha / period) * row_fun(period)
        for n in range(nodes - 1, -1, -1):
            w = (0.5 if n == 0 else 1.0) * ha / period
            acc = acc @ coarse + w * row_fun(n * ha)
        return np.linalg.matrix_power(coarse, nodes), acc
    eye = np.eye(op.size, dtype=complex)
    prefix = eye
    acc = np.zeros((n_rows, op.size), dtype=complex)
    l_next = op.at(0.0)
    for n in range(steps):
        t = n * dt
        w = (0.5 if n == 0 else 1.0) * dt / period
        acc += w * (row_fun(t) @ prefix)
        l1 = l_next
        l2 = op.at(t + 0.5 * dt)
        l3 = op.at(t + dt)
        k1 = l1
        k2 = l2 + (0.5 * dt) * (l2 @ k1)
        k3 = l2 + (0.5 * dt) * (l2 @ k2)
        k4 = l3 + dt * (l3 @ k3)
        prefix = (eye + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)) @ prefix
        l_next = l3
    acc += (0.5 * dt / period) * (row_fun(period) @ prefix)
    return prefix, acc


def _run_steady(phi, rows, vec0, steady_tol, max_periods):
    vec = vec0
    prev = None
    streak = 0
    residuals = []
    for period in range(1, max_periods + 1):
        avg = rows @ vec
        if prev is not None:
            resid = float(np.abs(avg - prev).max())
            residuals.append(resid)
            streak = streak + 1 if resid < steady_tol else 0
            if streak >= _CONSECUTIVE:
                return avg, vec, period, np.asarray(residuals)
        prev = avg
        vec = phi @ vec
    raise SteadyStateError(residuals)


def _real_guard(values, what, tol=_IMAG_TOL):
    worst = float(np.abs(np.imag(values)).max()) if np.size(values) else 0.0
    if worst > tol:
        warnings.warn(
            f"imaginary residue {worst:.2e} discarded from {what}", RuntimeWarning
        )
    return np.real(values)


def _orbital_count(model):
    if isinstance(model, SpinfulModel):
        return 2 * model.n_sites
    if isinstance(model, FourierHamiltonian):
        return model.dim
    raise TypeError(f"cannot build a master equation for {type(model).__name__}")


def _charge_labels(model):
    """Conserved-occupation label per Fock state; per spin when spinful."""
    if isinstance(model, SpinfulModel):
        n_orb = 2 * model.n_sites
        ups = [spin_orbital_index(s, 0) for s in range(model.n_sites)]
        downs = [spin_orbital_index(s, 1) for s in range(model.n_sites)]
        return occupation_counts(n_orb, ups) * (n_orb + 1) + occupation_counts(
            n_orb, downs
        )
    return occupation_counts(model.dim)


def _lift_gamma(model, lead):
    """Lead level-width matrix on the many-body orbital index set."""
    gamma = np.asarray(lead.gamma, dtype=complex)
    if isinstance(model, SpinfulModel):
        if lead.dim != model.n_sites:
            raise ValueError("lead dimension must match the number of dot sites")
        n_orb = 2 * model.n_sites
        out = np.zeros((n_orb, n_orb), dtype=complex)
        for spin in (0, 1):
            idx = [spin_orbital_index(s, spin) for s in range(model.n_sites)]
            out[np.ix_(idx, idx)] = gamma
        return out
    if lead.dim != model.dim:
        raise ValueError("lead dimension must match the dot orbital dimension")
    return gamma


def _collapse_blocks(matrix, n_blocks, dim):
    """Sum harmonic blocks along constant offsets: k -> sum_m X[m+k, m]."""
    x = matrix.reshape(n_blocks, dim, n_blocks, dim)
    scale = np.abs(matrix).max()
    comps = {}
    for k in range(-(n_blocks - 1), n_blocks):
        lo = max(0, -k)
        hi = min(n_blocks, n_blocks - k)
        c = x[lo + k : hi + k, :, lo:hi, :].transpose(1, 3, 0, 2)
        c = np.einsum("ijmm->ij", c.reshape(dim, dim, hi - lo, hi - lo))
        if scale and np.abs(c).max() > 1e-15 * scale:
            comps[k] = c
    return comps


def _dressed_components(eigen, ladders, lead, n_harmonics, dim):
    """Harmonic components of the in-scattering creation dressing, per
    orbital.  The bare operator is lifted with the central-block projector;
    summing blocks at fixed offset afterwards undoes that projection, so an
    occupation weight of one rebuilds the bare creation operator exactly."""
    blocks = 2 * n_harmonics + 1
    proj = np.zeros((blocks, blocks))
    proj[n_harmonics, n_harmonics] = 1.0
    y = eigen.vectors
    yd = y.conj().T
    weight = lead.occupation(eigen.omega_matrix)
    comps = []
    for d in ladders:
        lifted = np.kron(proj, d.conj().T)
        dressed = y @ (weight * (yd @ lifted @ y)) @ yd
        comps.append(_collapse_blocks(dressed, blocks, dim))
    return comps


def _dissipator_components(basis, gamma, ladders, dressing):
    """Harmonic superoperator components of one lead's dissipator.

    Four elementary terms per orbital pair, each followed by its adjoint
    superoperator partner.  Static limit: gain rate Gamma f, loss rate
    Gamma (1 - f), the standard weak-coupling rates.
    """
    dim = ladders[0].shape[0]
    ident = np.eye(dim)
    dag = [d.conj().T for d in ladders]
    comps = {}

    def add(k, left, right):
        _acc(comps, k, basis.sandwich(left, right))
        _acc(comps, -k, basis.sandwich(right.conj().T, left.conj().T))

    n_orb = len(ladders)
    for i in range(n_orb):
        for j in range(n_orb):
            gij = complex(gamma[i, j])
            gji = complex(gamma[j, i])
            if gij == 0.0 and gji == 0.0:
                continue
            cj = dressing.creation_components[j]
            # Loss terms at harmonic k consume the dressing component at -k,
            # so the loop must cover the sign-mirrored set even when the
            # dressing itself is one-sided (circular driving); otherwise the
            # gain terms' trace dual is left uncancelled.
            for k in sorted(set(cj) | {-k for k in cj} | {0}):
                ck = cj.get(k)
                cmk = cj.get(-k)
                if gij != 0.0 and ck is not None:
                    add(k, (-0.5 * gij) * (ladders[i] @ ck), ident)
                if k == 0:
                    r_loss = dag[j] - (ck if ck is not None else 0.0)
                elif ck is not None:
                    r_loss = -ck
                else:
                    r_loss = None
                if gij != 0.0 and r_loss is not None:
                    add(k, (0.5 * gij) * ladders[i], r_loss)
                if k == 0:
                    l_out = ladders[j] - (cmk.conj().T if cmk is not None else 0.0)
                elif cmk is not None:
                    l_out = -cmk.conj().T
                else:
                    l_out = None
                if gji != 0.0 and l_out is not None:
                    add(k, (-0.5 * gji) * (dag[i] @ l_out), ident)
                if gji != 0.0 and cmk is not None:
                    add(k, (0.5 * gji) * dag[i], cmk.conj().T)
    return comps


def _lead_key(lead, index):
    return lead.name if lead.name else str(index)


class _QmeCommon:
    """Shared propagation and bookkeeping for both constructions."""

    def _finish_init(self):
        self._period_cache = None
        self._cycle_cache = None
        self._schema = ["number"]
        for lead, key in zip(self.leads, self._keys):
            self._schema.append(("current", key))
        if self._spin_duals is not None:
            for key in self._keys:
                for spin in ("up", "down"):
                    self._schema.append(("spin", key, spin))

    def empty_state(self):
        """Vacuum density matrix on the physical Fock space."""
        rho = np.zeros((self.dim, self.dim), dtype=complex)
        rho[0, 0] = 1.0
        return rho

    def _materialize(self, vec):
        return self.basis.expand(vec)

    def _compiled(self):
        if self._period_cache is None:
            rows = self._row_fun()
            n_rows = len(self._schema)
            self._period_cache = _compile_period(
                self._op, self.dt, self.steps, rows, n_rows
            )
        return self._period_cache

    def _unpack(self, avg, vec, periods, residuals, imag_tol=_IMAG_TOL):
        avg = _real_guard(avg, "period averages", imag_tol)
        number = float(avg[0])
        currents = {}
        spin_currents = {} if self._spin_duals is not None else None
        for value, entry in zip(avg[1:], self._schema[1:]):
            if entry[0] == "current":
                currents[entry[1]] = float(value)
            else:
                spin_currents.setdefault(entry[2], {})[entry[1]] = float(value)
        return SteadyAverages(
            number=number,
            currents=currents,
            spin_currents=spin_currents,
            n_periods=periods,
            residuals=residuals,
            state=self._materialize(vec),
        )

    def evolve_to_steady_average(
        self,
        rho0=None,
        steady_tol=_DEFAULT_TOL,
        max_periods=_DEFAULT_MAX_PERIODS,
    ):
        """Iterate whole periods until the trapezoid period averages of all
        observables change by less than steady_tol for three consecutive
        periods, then return the final-period averages."""
        phi, rows = self._compiled()
        vec0 = self._initial_vec(rho0)
        avg, vec, periods, residuals = _run_steady(
            phi, rows, vec0, steady_tol, max_periods
        )
        return self._unpack(avg, vec, periods, residuals)

    def _sample_row_fun(self):
        # time-resolved readout; the extended construction overrides this
        # with the central-column projection while keeping the conserved
        # offset-summed duals for steady averaging
        return self._row_fun()

    def trajectory(self, rho0=None, n_periods=1, stride=1):
        """Step through n_periods, recording observables every stride steps."""
        rows = self._sample_row_fun()
        vec = self._initial_vec(rho0)
        total = self.steps * int(n_periods)
        times = []
        samples = []

        def record(t, v):
            times.append(t)
            samples.append(rows(t) @ v)

        if self._op.is_constant:
            step = _poly_step(self._op.at(0.0), self.dt)
            for n in range(total):
                if n % stride == 0:
                    record(n * self.dt, vec)
                vec = step @ vec
        else:
            l_next = self._op.at(0.0)
            for n in range(total):
                t = n * self.dt
                if n % stride == 0:
                    record(t, vec)
                l1 = l_next
                l2 = self._op.at(t + 0.5 * self.dt)
                l3 = self._op.at(t + self.dt)
                k1 = l1 @ vec
                k2 = l2 @ (vec + 0.5 * self.dt * k1)
                k3 = l2 @ (vec + 0.5 * self.dt * k2)
                k4 = l3 @ (vec + self.dt * k3)
                vec = vec + (self.dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                l_next = l3
        record(total * self.dt, vec)
        data = np.asarray(samples)
        currents = {}
        for col, entry in enumerate(self._schema):
            if isinstance(entry, tuple) and entry[0] == "current":
                currents[entry[1]] = data[:, col].real
        return QmeTrajectory(
            times=np.asarray(times),
            number=data[:, 0].real,
            currents=currents,
            state=self._materialize(vec),
            imag_residue=np.abs(data.imag).max(axis=1),
        )

    def observe(self, rho, t):
        """Instantaneous observables {number, currents} of a state."""
        vec = self._state_vec(rho)
        vals = _real_guard(self._sample_row_fun()(t) @ vec, "observables")
        out = {"number": float(vals[0])}
        currents = {}
        for value, entry in zip(vals[1:], self._schema[1:]):
            if entry[0] == "current":
                currents[entry[1]] = float(value)
        out["currents"] = currents
        return out

    def _checked_compress(self, matrix, what):
        m = np.asarray(matrix, dtype=complex)
        if m.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(
                f"{what} must be {self.basis.dim} x {self.basis.dim}, got {m.shape}"
            )
        vec = self.basis.compress(m)
        leak = np.abs(m - self.basis.expand(vec)).max()
        if leak > 1e-10 * max(1.0, np.abs(m).max()):
            raise ValueError(
                f"{what} carries weight {leak:.2e} outside the conserved-charge "
                "sectors; such coherences are not propagated"
            )
        return vec


class HilbertSpaceQme(_QmeCommon):
    """Master equation on the physical Fock space with periodic dissipators.

    Parameters: a driven one-body model (FourierHamiltonian) or a
    SpinfulModel, the wide-band leads, the harmonic cutoff used for the
    dressing construction, and optionally the step dt (snapped so that an
    integer number of steps covers one period; default T/2000).
    """

    def __init__(self, model, leads, n_harmonics, dt=None):
        self.model = model
        self.leads = tuple(leads)
        mb = many_body_model(model)
        self.omega = float(mb.omega)
        self.period = 2.0 * np.pi / self.omega
        self.n_harmonics = int(n_harmonics)
        self.dim = mb.dim
        self.steps = (
            _DEFAULT_STEPS if dt is None else max(2, int(round(self.period / dt)))
        )
        self.dt = self.period / self.steps
        labels = _charge_labels(model)
        self.basis = PairBasis(labels)
        blocks = 2 * self.n_harmonics + 1
        hf = np.asarray(build_floquet_hamiltonian(mb, self.n_harmonics))
        self.eigen = floquet_eigen(hf, np.tile(labels, blocks))
        n_orb = _orbital_count(model)
        ladders = ladder_operators(n_orb)
        self.dressings = tuple(
            DressedDissipator(
                omega=self.omega,
                creation_components=tuple(
                    _dressed_components(self.eigen, ladders, lead, self.n_harmonics, self.dim)
                ),
                bare=tuple(ladders),
            )
            for lead in self.leads
        )
        ident = np.eye(self.dim)
        total = {}
        for n, blk in mb.blocks.items():
            comp = -1j * (self.basis.sandwich(blk, ident) - self.basis.sandwich(ident, blk))
            _acc(total, -n, comp)
        self._lead_ops = []
        for lead, dressing in zip(self.leads, self.dressings):
            gamma = _lift_gamma(model, lead)
            comps = _dissipator_components(self.basis, gamma, ladders, dressing)
            self._lead_ops.append(_HarmonicSuperop(comps, self.omega, self.basis.size))
            for k, v in comps.items():
                _acc(total, k, v)
        self._lead_ops = tuple(self._lead_ops)
        self._op = _HarmonicSuperop(total, self.omega, self.basis.size)
        counts = occupation_counts(n_orb).astype(float)
        self._number_dual = self.basis.compress(np.diag(counts))
        if isinstance(model, SpinfulModel):
            ups = [spin_orbital_index(s, 0) for s in range(model.n_sites)]
            downs = [spin_orbital_index(s, 1) for s in range(model.n_sites)]
            self._spin_duals = (
                self.basis.compress(np.diag(occupation_counts(n_orb, ups).astype(float))),
                self.basis.compress(np.diag(occupation_counts(n_orb, downs).astype(float))),
            )
        else:
            self._spin_duals = None
        self._keys = tuple(_lead_key(lead, i) for i, lead in enumerate(self.leads))
        self._finish_init()

    def _row_fun(self):
        number = self._number_dual
        spin = self._spin_duals
        lead_ops = self._lead_ops
        n_rows = len(self._schema)

        def rows(t):
            out = np.empty((n_rows, self.basis.size), dtype=complex)
            out[0] = number
            mats = [op.at(t) for op in lead_ops]
            for i, mat in enumerate(mats):
                out[1 + i] = number @ mat
            if spin is not None:
                r = 1 + len(mats)
                for mat in mats:
                    for dual in spin:
                        out[r] = dual @ mat
                        r += 1
            return out

        return rows

    def _initial_vec(self, rho0):
        if rho0 is None:
            rho0 = self.empty_state()
        return self._checked_compress(rho0, "initial state")

    _state_vec = _initial_vec

    def liouvillian_at(self, t):
        """Full packed generator at time t (commutator plus all leads)."""
        return self._op.at(t)

    def rhs(self, rho, t):
        """Time derivative of a Fock-space density matrix."""
        vec = self._checked_compress(rho, "state")
        return self.basis.expand(self._op.at(t) @ vec)

    def lead_rhs(self, rho, t, lead):
        """Contribution of a single lead's dissipator to the derivative."""
        vec = self._checked_compress(rho, "state")
        return self.basis.expand(self._lead_ops[lead].at(t) @ vec)



def _central_bands(matrix, n_blocks, dim):
    """Harmonic bands of an extended-space operator, read down the central
    block column (the column the observables project).  A weight of one
    rebuilds the bare operator exactly: only the k = 0 band survives."""
    x = matrix.reshape(n_blocks, dim, n_blocks, dim)
    center = (n_blocks - 1) // 2
    scale = np.abs(matrix).max()
    comps = {}
    for k in range(-center, center + 1):
        blk = x[center + k, :, center, :]
        if scale and np.abs(blk).max() > 1e-15 * scale:
            comps[k] = blk.copy()
    return comps




class FloquetSpaceQme(_QmeCommon):
    """Master equation on the harmonic-extended space, constant in time.

    Propagates the full extended density matrix: every pair of harmonic
    blocks, not only a band ladder.  A physical initial state given as a
    plain matrix enters in the central harmonic block, the embedding with
    unit extended trace.  Time-resolved observables and ``project`` read
    the central block column with one drive phase per harmonic; from the
    central-block start that readout rings at the drive harmonics well
    beyond the physical-space transient, the short-time signature of this
    construction.  The ringing readout is complex and the real part is
    reported, with the discarded magnitude riding on trajectories as
    ``imag_residue``.  The dissipative mixing that damps the ringing also
    spreads block weight across the window, so the central column loses
    roughly half its share within the first drive periods and keeps
    sagging slowly after; the extended trace itself is conserved exactly,
    every in-scattering family being paired with the out-scattering
    family carrying the complementary occupation weight.

    Steady averages come through two routes.  evolve_to_steady_average
    contracts against offset-summed duals whose zero-offset row is the
    conserved extended trace: offset sums are invariant under block
    translation, and with the Toeplitz-extended dressings the generator
    itself is translation covariant along the band ladder, so the search
    settles at any window width and every average lands on the physical
    cycle up to support truncation at the window edge.  cycle_average
    instead measures the covariant cycle directly from a band-ladder
    start and converges in far fewer periods, at the price of the wide
    window its inward-moving edge deficit demands; see its docstring.

    Memory grows fast: the packed extended state is (2 N + 1)^2 times the
    physical pair count and the compiled generator is the square of that,
    so a spinful two-site model at N = 3 already wants hundreds of MB.
    The physical-space construction is the practical route there.

    ``dressings`` reports the central-column harmonic content of the
    extended dressing matrices, comparable across constructions; the
    generator consumes the full matrices.
    """

    def __init__(self, model, leads, n_harmonics, dt=None):
        self.model = model
        self.leads = tuple(leads)
        mb = many_body_model(model)
        self.omega = float(mb.omega)
        self.period = 2.0 * np.pi / self.omega
        self.n_harmonics = int(n_harmonics)
        self.dim = mb.dim
        self.steps = (
            _DEFAULT_STEPS if dt is None else max(2, int(round(self.period / dt)))
        )
        self.dt = self.period / self.steps
        blocks = 2 * self.n_harmonics + 1
        self._blocks = blocks
        self._harmonics = np.arange(-self.n_harmonics, self.n_harmonics + 1)
        labels = _charge_labels(model)
        self.basis = PairBasis(labels)
        xbasis = PairBasis(np.tile(labels, blocks))
        self._xbasis = xbasis
        hf = np.asarray(build_floquet_hamiltonian(mb, self.n_harmonics))
        self.eigen = floquet_eigen(hf, np.tile(labels, blocks))
        n_orb = _orbital_count(model)
        ladders = ladder_operators(n_orb)
        ident_h = np.eye(blocks)
        lowers = [np.kron(ident_h, d) for d in ladders]
        raisers = [op.conj().T for op in lowers]
        y = self.eigen.vectors
        yd = y.conj().T
        dressed_full = []
        dressings = []
        for lead in self.leads:
            weight = lead.occupation(self.eigen.omega_matrix)
            # the eigenbasis sandwich is translation covariant only in the
            # infinite ladder; at finite width its edge blocks see clipped
            # sideband sets and carry rates the interior never would, and the
            # ladder coupling drags that edge error into every window average.
            # Rebuilding each dressed operator from its central-column bands
            # restores the Toeplitz form the untruncated operator has, leaving
            # plain support truncation as the only finite-window defect.
            components = []
            full = []
            for j in range(n_orb):
                raw = y @ (weight * (yd @ raisers[j] @ y)) @ yd
                bands = _central_bands(raw, blocks, self.dim)
                full.append(
                    sum(np.kron(np.eye(blocks, k=-q), c) for q, c in bands.items())
                )
                components.append(bands)
            dressed_full.append(full)
            dressings.append(
                DressedDissipator(
                    omega=self.omega,
                    creation_components=tuple(components),
                    bare=tuple(ladders),
                )
            )
        self.dressings = tuple(dressings)
        ext = blocks * self.dim
        xid = np.eye(ext)
        # the commutator's block diagonal must rotate band m at -i m omega
        # to match the exp(+i m omega t) readout; that is the opposite sign
        # from the quasi-energy convention the dressing eigenbasis needs
        hx = hf + 2.0 * self.omega * np.kron(
            fourier_number(self.n_harmonics), np.eye(self.dim)
        )
        total = -1j * (xbasis.sandwich(hx, xid) - xbasis.sandwich(xid, hx))
        lead_gens = []
        for lead, full in zip(self.leads, dressed_full):
            gamma = _lift_gamma(model, lead)
            gen = np.zeros((xbasis.size, xbasis.size), dtype=complex)

            def emit(scale, left, right):
                nonlocal gen
                if scale == 0.0:
                    return
                gen = gen + scale * xbasis.sandwich(left, right)
                gen = gen + np.conj(scale) * xbasis.sandwich(
                    right.conj().T, left.conj().T
                )

            for i in range(n_orb):
                for j in range(n_orb):
                    gij = complex(gamma[i, j])
                    gji = complex(gamma[j, i])
                    if gij == 0.0 and gji == 0.0:
                        continue
                    cj = full[j]
                    emit(-0.5 * gij, lowers[i] @ cj, xid)
                    emit(0.5 * gij, lowers[i], raisers[j] - cj)
                    emit(-0.5 * gji, raisers[i] @ (lowers[j] - cj.conj().T), xid)
                    emit(0.5 * gji, raisers[i], cj.conj().T)
            lead_gens.append(gen)
            total = total + gen
        self._lead_gens = tuple(lead_gens)
        size = xbasis.size
        self._op = _HarmonicSuperop({0: total}, self.omega, size)
        self._lead_ops = tuple(
            _HarmonicSuperop({0: g}, self.omega, size) for g in self._lead_gens
        )
        center = self.n_harmonics
        dim = self.dim
        self._offsets = np.arange(-(blocks - 1), blocks)

        def offset_stack(weights):
            # the row for offset k reads sum_m tr(diag(weights) block[m+k, m])
            # off the packed vector; drive phases are attached at evaluation
            # time.  The k = 0 row is the extended-trace dual, which the
            # generator conserves exactly, so period averages taken through
            # these rows cannot lose weight to block redistribution.
            out = np.empty((2 * blocks - 1, size), dtype=complex)
            ix = np.arange(dim)
            for p, k in enumerate(self._offsets):
                mat = np.zeros((ext, ext), dtype=complex)
                for m in range(max(0, -k), min(blocks, blocks - k)):
                    mat[(m + k) * dim + ix, m * dim + ix] = weights
                out[p] = xbasis.compress(mat)
            return out

        def column_stack(weights):
            # the row for harmonic m reads tr(diag(weights) block[m, center]):
            # the projection convention for time-resolved observables
            out = np.empty((blocks, size), dtype=complex)
            ix = np.arange(dim)
            for p in range(blocks):
                mat = np.zeros((ext, ext), dtype=complex)
                mat[p * dim + ix, center * dim + ix] = weights
                out[p] = xbasis.compress(mat)
            return out

        weight_sets = [occupation_counts(n_orb).astype(float)]
        if isinstance(model, SpinfulModel):
            ups = [spin_orbital_index(s, 0) for s in range(model.n_sites)]
            downs = [spin_orbital_index(s, 1) for s in range(model.n_sites)]
            weight_sets += [
                occupation_counts(n_orb, orbs).astype(float)
                for orbs in (ups, downs)
            ]

        def dual_rows(builder):
            duals = np.stack([builder(w) for w in weight_sets])
            gens = (
                np.stack([[d @ g for d in duals] for g in self._lead_gens])
                if self._lead_gens
                else np.zeros((0,) + duals.shape, dtype=complex)
            )
            return duals, gens

        self._steady_duals = dual_rows(offset_stack)
        self._column_duals = dual_rows(column_stack)
        self._spin_duals = ("up", "down") if len(weight_sets) > 1 else None
        self._keys = tuple(_lead_key(lead, i) for i, lead in enumerate(self.leads))
        self._finish_init()

    def _phase_rows(self, pack, freqs):
        duals, gens = pack
        n_rows = len(self._schema)
        omega = self.omega
        spinful = self._spin_duals is not None

        def rows(t):
            phases = np.exp(1j * freqs * omega * t)
            out = np.empty((n_rows, duals.shape[-1]), dtype=complex)
            out[0] = phases @ duals[0]
            r = 1
            for i in range(gens.shape[0]):
                out[r] = phases @ gens[i, 0]
                r += 1
            if spinful:
                for i in range(gens.shape[0]):
                    for s in (1, 2):
                        out[r] = phases @ gens[i, s]
                        r += 1
            return out

        return rows

    def _row_fun(self):
        return self._phase_rows(self._steady_duals, self._offsets)

    def _sample_row_fun(self):
        return self._phase_rows(self._column_duals, self._harmonics)

    def cycle_average(
        self,
        rho0=None,
        steady_tol=_DEFAULT_TOL,
        max_periods=_DEFAULT_MAX_PERIODS,
    ):
        """Period averages of the translation-covariant Floquet cycle.

        Seeds every harmonic block with the physical state (a band-ladder
        start) and runs the steady search on the central-column readout.
        The band interior holds the covariant cycle, whose column readout
        follows the physical evolution exactly, but the window edges eat
        inward and eventually corrupt the column.  The search therefore
        renews the window: every few periods the physical state is
        projected off the column, hermitized, trace normalized, and lifted
        onto a fresh ladder, so the readout tracks the physical transient
        indefinitely.  Each renewal re-seeds the column from a state whose
        only error is the deficit accumulated since the previous renewal,
        and that perturbation relaxes on the coupling time scale, slower
        than the renewal cadence, so consecutive single-period averages
        jitter at the deficit scale no matter how settled the cycle is.
        The steady gate therefore compares consecutive renewal-cycle
        means, which converge like the physical transient, and the
        settled averages carry an error at the per-renewal deficit, which
        shrinks exponentially with the window width.  Within this module
        the route is exercised at n_harmonics of five or six, where that
        error sits two to three orders below the coupling-scale
        observables.
        evolve_to_steady_average settles at any window width but reads the
        window's own edge-tilted fixed point; see the class docstring.
        """
        if rho0 is None:
            rho0 = self.empty_state()
        rho0 = np.asarray(rho0, dtype=complex)
        if rho0.shape != (self.dim, self.dim):
            raise ValueError(f"state must be {self.dim} x {self.dim}")
        ident = np.eye(self._blocks)
        vec = self._xcompress(np.kron(ident, rho0), "state")
        if self._cycle_cache is None:
            self._cycle_cache = _compile_period(
                self._op, self.dt, self.steps,
                self._sample_row_fun(), len(self._schema),
            )
        phi, rows = self._cycle_cache
        renew_every = max(4, self.n_harmonics)
        prev, streak, residuals = None, 0, []
        acc = np.zeros(len(self._schema), dtype=complex)
        filled = 0
        for period in range(1, max_periods + 1):
            acc += rows @ vec
            filled += 1
            vec = phi @ vec
            if period % renew_every:
                continue
            cycle_avg = acc / filled
            if prev is not None:
                resid = float(np.abs(cycle_avg - prev).max())
                residuals.append(resid)
                streak = streak + 1 if resid < steady_tol else 0
                if streak >= _CONSECUTIVE:
                    # phase rows cancel only on the exact cycle, so the
                    # settled mean keeps deficit-scale imaginary residue
                    return self._unpack(
                        cycle_avg, vec, period, np.asarray(residuals),
                        imag_tol=1e-4,
                    )
            prev = cycle_avg
            acc = np.zeros_like(acc)
            filled = 0
            rho = self.project(vec, 0.0)
            rho = 0.5 * (rho + rho.conj().T)
            trace = float(np.trace(rho).real)
            if abs(trace - 1.0) > 1e-3:
                raise SteadyStateError(residuals)
            vec = self._xcompress(np.kron(ident, rho / trace), "state")
        raise SteadyStateError(residuals)

    def _xcompress(self, matrix, what):
        m = np.asarray(matrix, dtype=complex)
        vec = self._xbasis.compress(m)
        leak = np.abs(m - self._xbasis.expand(vec)).max()
        if leak > 1e-10 * max(1.0, np.abs(m).max()):
            raise ValueError(
                f"{what} carries weight {leak:.2e} outside the conserved-charge "
                "sectors; such coherences are not propagated"
            )
        return vec

    def _initial_vec(self, rho0):
        if rho0 is None:
            rho0 = self.empty_state()
        rho0 = np.asarray(rho0, dtype=complex)
        if rho0.ndim == 1:
            if rho0.shape != (self._xbasis.size,):
                raise ValueError("packed extended vector has the wrong length")
            return rho0.astype(complex)
        ext = self._blocks * self.dim
        if rho0.shape == (self.dim, self.dim):
            xmat = np.zeros((ext, ext), dtype=complex)
            lo = self.n_harmonics * self.dim
            xmat[lo : lo + self.dim, lo : lo + self.dim] = rho0
            return self._xcompress(xmat, "state")
        if rho0.shape == (ext, ext):
            return self._xcompress(rho0, "state")
        raise ValueError(
            f"state must be {self.dim} x {self.dim}, {ext} x {ext}, or a "
            "packed extended vector"
        )

    _state_vec = _initial_vec

    def _materialize(self, vec):
        """Extended density matrix from the packed pair vector."""
        return self._xbasis.expand(vec)

    def project(self, rho_f, t):
        """Physical density matrix at time t from an extended state: the
        central block column with one drive phase per harmonic."""
        ext = self._xbasis.expand(self._state_vec(rho_f))
        dim = self.dim
        cols = slice(self.n_harmonics * dim, (self.n_harmonics + 1) * dim)
        out = np.zeros((dim, dim), dtype=complex)
        for p, harm in enumerate(self._harmonics):
            out += np.exp(1j * harm * self.omega * t) * ext[
                p * dim : (p + 1) * dim, cols
            ]
        return out

    def liouvillian(self):
        """Constant generator acting on the packed extended state."""
        return self._op.at(0.0)

    def rhs(self, rho_f, t=0.0):
        """Time derivative of an extended density matrix (t is ignored,
        the generator is constant)."""
        vec = self._state_vec(rho_f)
        return self._materialize(self._op.at(0.0) @ vec)

    def lead_rhs(self, rho_f, t, lead):
        """Contribution of a single lead's dissipator to the derivative."""
        vec = self._state_vec(rho_f)
        return self._materialize(self._lead_ops[lead].at(0.0) @ vec)
