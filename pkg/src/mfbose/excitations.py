"""Excitation Hamiltonian, its interpolation family and the exact conjugation identities.

Everything lives on the full excitation space (caps ``K = n_max = N``), which
is unitarily equivalent to the ``N``-particle sector.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import solver
from .errors import ValidationError
from .fock import (
    CappedBasis,
    a_of,
    assemble_hamiltonian,
    assemble_one_body,
    assemble_phi_plus,
    assemble_i_phi_minus,
    assemble_quadratic_Q,
    assemble_remainder_R,
    b_of,
    b_operator,
    enumerate_capped,
    enumerate_sector,
    excitation_unitary_map,
    number_plus,
)
from .model import Observable, Potential


# ---------------------------------------------------------------------------
# smooth hyperbolic ratios (finite as |h| -> 0)


def sinhc(x: float) -> float:
    """``sinh(x) / x``."""
    return 1.0 + x * x / 6.0 + x ** 4 / 120.0 if abs(x) < 1e-4 else np.sinh(x) / x


def coshm(x: float) -> float:
    """``(cosh(x) - 1) / x^2``."""
    return 0.5 * sinhc(0.5 * x) ** 2


def sinhm(x: float) -> float:
    """``(sinh(x) - x) / x^3``."""
    if abs(x) >= 1.0:
        return (np.sinh(x) - x) / x ** 3
    # series 1/3! + x^2/5! + ...; the direct form cancels badly for small x
    term, total, x2 = 1.0 / 6.0, 1.0 / 6.0, x * x
    for k in range(2, 14, 2):
        term *= x2 / ((k + 2) * (k + 3))
        total += term
    return total


# ---------------------------------------------------------------------------
# G_N and G_N(s)


@dataclass(eq=False)
class ExcitationSystem:
    """Quadratic part, remainder and full excitation Hamiltonian for one ``N``."""

    potential: Potential
    N: int
    basis: CappedBasis
    corrupt_Q: bool = False

    @cached_property
    def Q(self) -> sp.csr_matrix:
        return assemble_quadratic_Q(self.potential, self.basis, corrupt=self.corrupt_Q)

    @cached_property
    def remainder(self):
        return assemble_remainder_R(self.potential, self.basis, self.N)

    @property
    def R(self) -> sp.csr_matrix:
        """Remainder from the operational construction ``G_N - Q``."""
        return self.remainder.operational

    @cached_property
    def emap(self):
        return excitation_unitary_map(enumerate_sector(self.basis.lattice, self.N), self.basis)

    @cached_property
    def H(self) -> sp.csr_matrix:
        return assemble_hamiltonian(self.potential, self.emap.sector)

    @cached_property
    def G(self) -> sp.csr_matrix:
        """``U H U^* - N v(0) / 2``."""
        return (self.emap.conjugate(self.H) - 0.5 * self.N * self.potential.v0 * sp.identity(self.basis.dim)).tocsr()

    def G_s(self, s: float) -> sp.csr_matrix:
        if not 0.0 <= s <= 1.0:
            raise ValidationError(f"s must lie in [0, 1], got {s}")
        return (self.Q + s * self.R).tocsr()

    def excitation_identity_residual(self) -> float:
        """``||G - Q - R_transcribed||_F / ||Q||_F``."""
        diff = self.G - assemble_quadratic_Q(self.potential, self.basis, corrupt=self.corrupt_Q) - self.remainder.transcribed
        qn = sp.linalg.norm(self.Q)
        return float(sp.linalg.norm(diff) / qn) if qn else float(sp.linalg.norm(diff))


def excitation_system(potential: Potential, N: int, lattice, **kw) -> ExcitationSystem:
    return ExcitationSystem(potential, N, enumerate_capped(lattice, N, N), **kw)


def build_GN(s: float, N: int, potential: Potential, basis: CappedBasis) -> sp.csr_matrix:
    """``G_N(s) = Q + s R_N`` on the full excitation space."""
    if basis.n_total_cap != N or basis.mode_cap != N:
        raise ValidationError("G_N(s) needs the full excitation space: cap = mode_cap = N")
    return ExcitationSystem(potential, N, basis).G_s(s)


# ---------------------------------------------------------------------------
# ground-state diagnostics along the interpolation


@dataclass(frozen=True)
class DiagnosticRow:
    s: float
    N: int
    energy: float
    gap: float
    m1: float
    m2: float
    remainder_norm: float


@dataclass(frozen=True)
class InterpolationDiagnostics:
    rows: list
    flags: dict = field(default_factory=dict)

    @property
    def min_gap(self) -> float:
        return min(r.gap for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "N", "E_N(s)", "gap", "m1", "m2", "remainder_norm"])
        for r in self.rows:
            w.writerow([repr(r.s), r.N] + [f"{x:.12e}" for x in (r.energy, r.gap, r.m1, r.m2, r.remainder_norm)])
        return buf.getvalue()


def _diagnose(system: ExcitationSystem, s: float, tol: float, dense_limit: int) -> DiagnosticRow:
    gs = solver.ground_state(system.G_s(s), tol=tol, dense_limit=dense_limit)
    v = gs.vector
    n1 = system.basis.n_plus + 1.0
    w = np.abs(v) ** 2
    return DiagnosticRow(
        s=float(s),
        N=system.N,
        energy=gs.energy,
        gap=gs.gap,
        m1=float(np.sum(w * n1)),
        m2=float(np.sum(w * n1 ** 2)),
        remainder_norm=float(np.linalg.norm(system.R @ v)),
    )


def moment_trend(rows: Sequence[DiagnosticRow], key: str = "m2") -> dict:
    """Least-squares slope of the per-``N`` maximum of ``key`` against ``N``, with its standard error."""
    Ns = sorted({r.N for r in rows})
    y = np.array([max(getattr(r, key) for r in rows if r.N == n) for n in Ns])
    x = np.array(Ns, dtype=float)
    if len(x) < 3:
        return {"slope": float("nan"), "stderr": float("nan"), "bound": float(y.max()), "increasing": False}
    A = np.column_stack([np.ones_like(x), x])
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = len(x) - 2
    resid = y - A @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    slope, se = float(coef[1]), float(np.sqrt(cov[1, 1]))
    return {"slope": slope, "stderr": se, "bound": float(y.max()), "increasing": bool(slope > 2.0 * se)}


def interpolation_diagnostics(s_grid, N_list, potential: Potential, lattice, *, tol: float = solver.EIG_TOL,
                              dense_limit: int = solver.DENSE_LIMIT, threads: int = 1) -> InterpolationDiagnostics:
    """Ground energy, gap, ``(N_+ + 1)^k`` moments and ``||R psi||`` on the ``(s, N)`` grid."""
    s_grid = [float(s) for s in s_grid]
    N_list = [int(n) for n in N_list]
    if not s_grid or not N_list:
        raise ValidationError("s grid and N list must be nonempty")
    systems = {N: ExcitationSystem(potential, N, enumerate_capped(lattice, N, N)) for N in N_list}
    cells = [(N, s) for N in N_list for s in s_grid]
    run = lambda cell: _diagnose(systems[cell[0]], cell[1], tol, dense_limit)
    if threads > 1:
        for sys_ in systems.values():
            sys_.R  # build shared operators before fanning out
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, cells))
    else:
        rows = [run(c) for c in cells]

    flags = {"gap_dip": [], "moment_trend": moment_trend(rows, "m2")}
    for N in N_list:
        mine = [r for r in rows if r.N == N]
        g0 = next((r.gap for r in mine if r.s == 0.0), None)
        if g0 is not None:
            flags["gap_dip"] += [[N, r.s] for r in mine if r.gap < 0.5 * g0]
    flags["moments_grow_with_N"] = flags["moment_trend"]["increasing"]
    return InterpolationDiagnostics(rows, flags)


def remainder_bound_fit(potential: Potential, N: int, lattice, *, samples: int = 32, seed: int = 0) -> float:
    """Largest ``sqrt(N) ||R psi|| / ||(N_+ + 1)^{3/2} psi||`` over random excitation vectors."""
    system = ExcitationSystem(potential, N, enumerate_capped(lattice, N, N))
    rng = np.random.default_rng(seed)
    weight = (system.basis.n_plus + 1.0) ** 1.5
    best = 0.0
    for _ in range(samples):
        psi = rng.standard_normal(system.basis.dim) + 1j * rng.standard_normal(system.basis.dim)
        best = max(best, np.sqrt(N) * np.linalg.norm(system.R @ psi) / np.linalg.norm(weight * psi))
    return float(best)


# ---------------------------------------------------------------------------
# conjugation identities


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def _maxabs(A) -> float:
    return float(np.max(np.abs(A))) if np.size(A) else 0.0


def conjugated_b(h, c: int, basis: CappedBasis, N: int) -> np.ndarray:
    """Closed form of ``exp(sqrt(N) phi_+(h)) b_p exp(-sqrt(N) phi_+(h))`` for the mode in column ``c``."""
    h = np.asarray(h, dtype=complex)
    x = float(np.linalg.norm(h))
    g = np.cosh(x)
    eye = np.eye(basis.dim)
    bp = _dense(b_operator(basis, c, N))
    bh = _dense(b_of(h, basis, N))
    ah = _dense(a_of(h, basis))
    ap = _dense(a_of(np.eye(len(h))[c], basis))
    iphim = bh - bh.conj().T
    Np = _dense(number_plus(basis))
    sN = np.sqrt(N)
    return (
        g * bp
        + g * coshm(x) * h[c] * iphim
        - coshm(x) * h[c] * bh.conj().T
        - sN * g * sinhc(x) * h[c] * (eye - Np / N)
        + sinhc(x) * coshm(x) / sN * h[c] * (ah.conj().T @ ah)
        + sinhc(x) / sN * (ah.conj().T @ ap)
    )


def conjugated_dGamma(h, Hmat, basis: CappedBasis, N: int) -> np.ndarray:
    """Closed form of ``exp(sqrt(N) phi_+(h)) dGamma(H) exp(-sqrt(N) phi_+(h))``."""
    h = np.asarray(h, dtype=complex)
    Hmat = np.asarray(Hmat)
    x = float(np.linalg.norm(h))
    Hh = Hmat @ h
    hHh = float(np.vdot(h, Hh).real)
    eye = np.eye(basis.dim)
    Np = _dense(number_plus(basis))
    ah = _dense(a_of(h, basis))
    aHh = _dense(a_of(Hh, basis))
    sN = np.sqrt(N)
    return (
        _dense(assemble_one_body(Hmat, basis))
        + sN * sinhc(x) * _dense(assemble_i_phi_minus(Hh, basis, N))
        - N * sinhc(x) ** 2 * hHh * (eye - Np / N)
        + coshm(x) * (ah.conj().T @ aHh + aHh.conj().T @ ah)
        + sN * sinhc(x) * coshm(x) * hHh * _dense(assemble_i_phi_minus(h, basis, N))
        + coshm(x) ** 2 * hHh * (ah.conj().T @ ah)
    )


def partial_t_closed_form(h, dh, basis: CappedBasis, N: int) -> np.ndarray:
    """Closed form of ``[d/dt exp(sqrt(N) phi_+(h_t))] exp(-sqrt(N) phi_+(h_t))``."""
    h = np.asarray(h, dtype=complex)
    dh = np.asarray(dh, dtype=complex)
    x = float(np.linalg.norm(h))
    ip = np.vdot(dh, h)
    eye = np.eye(basis.dim)
    Np = _dense(number_plus(basis))
    ah = _dense(a_of(h, basis))
    adh = _dense(a_of(dh, basis))
    phip = lambda f: _dense(assemble_phi_plus(f, basis, N))
    phim = lambda f: -1j * _dense(assemble_i_phi_minus(f, basis, N))
    sN = np.sqrt(N)
    return (
        sN * sinhc(x) * phip(dh)
        - sN * sinhc(x) * coshm(x) * ip.imag * phim(h)
        - sN * sinhm(x) * ip.real * phip(h)
        - 1j * N * sinhc(x) ** 2 * ip.imag * (eye - Np / N)
        + 1j * coshm(x) ** 2 * ip.imag * (ah.conj().T @ ah)
        + coshm(x) * (ah.conj().T @ adh - adh.conj().T @ ah)
    )


@dataclass(frozen=True)
class ConjugationReport:
    residuals: dict
    tolerances: dict

    @property
    def failures(self) -> dict:
        return {k: v for k, v in self.residuals.items() if v > self.tolerances[k]}

    @property
    def ok(self) -> bool:
        return not self.failures


CONJUGATION_TOLERANCES = {
    "b_conjugation": 1e-8,
    "dGamma_conjugation": 1e-8,
    "number_b": 1e-10,
    "number_b_star": 1e-10,
    "number_phi_plus": 1e-10,
    "number_i_phi_minus": 1e-10,
    "partial_t": 1e-6,
}


def default_path(h) -> Callable[[float], tuple]:
    """A smooth path through ``h`` at ``t = 0``: ``h_t = (1 + 0.3 t) exp(i t k) h_k``, with its derivative."""
    h = np.asarray(h, dtype=complex)
    k = np.arange(1, len(h) + 1)

    def path(t):
        ph = np.exp(1j * t * k)
        return (1 + 0.3 * t) * ph * h, (0.3 + 1j * k * (1 + 0.3 * t)) * ph * h

    return path


def verify_conjugation_identities(h, s: float, N: int, basis: CappedBasis, *, Hmat=None, path=None,
                                  t0: float = 0.0, step: float = 1e-5, seed: int = 0,
                                  tol: float = 1e-13) -> ConjugationReport:
    """Max-entry residuals of the exact conjugation identities on the excitation space.

    The exponentials are built column by column with the Krylov exponential.
    ``Hmat`` defaults to a seeded random Hermitian matrix on the excitation
    modes; ``path`` maps ``t`` to ``(h_t, dh_t/dt)`` and defaults to
    :func:`default_path`.  The derivative check uses a central difference with
    ``step``; a Richardson estimate from ``step`` and ``step / 2`` is reported
    alongside.
    """
    h = np.asarray(h, dtype=complex)
    k = len(basis.modes)
    if h.shape != (k,):
        raise ValidationError(f"h must have {k} entries")
    sN = np.sqrt(N)
    X = sN * assemble_phi_plus(h, basis, N)
    res = {}

    conj = lambda B: solver.expm_conjugate(X, B, tol=tol)
    res["b_conjugation"] = max(
        _maxabs(conj(b_operator(basis, c, N)) - conjugated_b(h, c, basis, N)) for c in range(k)
    )
    if Hmat is None:
        rng = np.random.default_rng(seed)
        Z = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
        Hmat = 0.5 * (Z + Z.conj().T)
    res["dGamma_conjugation"] = _maxabs(
        conj(assemble_one_body(Hmat, basis)) - conjugated_dGamma(h, Hmat, basis, N)
    )

    Np = number_plus(basis)
    left = lambda B: solver.expm_conjugate(-s * Np, B, tol=tol)
    bh = _dense(b_of(h, basis, N))
    phip = _dense(assemble_phi_plus(h, basis, N))
    iphim = _dense(assemble_i_phi_minus(h, basis, N))
    g, sg = np.cosh(s), np.sinh(s)
    res["number_b"] = _maxabs(left(bh) - np.exp(s) * bh)
    res["number_b_star"] = _maxabs(left(bh.conj().T) - np.exp(-s) * bh.conj().T)
    res["number_phi_plus"] = _maxabs(left(phip) - (g * phip + sg * iphim))
    res["number_i_phi_minus"] = _maxabs(left(iphim) - (g * iphim + sg * phip))

    path = path or default_path(h)
    eye = np.eye(basis.dim)

    def expo(t, sign=1.0):
        X_t = sN * assemble_phi_plus(path(t)[0], basis, N)
        return np.column_stack([solver.expm_multiply(X_t, eye[:, i], sign, tol=tol) for i in range(basis.dim)])

    inv = expo(t0, -1.0)
    central = lambda d: (expo(t0 + d) - expo(t0 - d)) / (2 * d) @ inv
    D1 = central(step)
    D2 = central(step / 2)
    exact = partial_t_closed_form(*path(t0), basis, N)
    res["partial_t"] = _maxabs(D1 - exact)
    richardson = _maxabs((4 * D2 - D1) / 3 - exact)
    tols = dict(CONJUGATION_TOLERANCES)
    res["partial_t_richardson"] = richardson
    tols["partial_t_richardson"] = CONJUGATION_TOLERANCES["partial_t"]
    return ConjugationReport({k_: float(v) for k_, v in res.items()}, tols)


# ---------------------------------------------------------------------------
# moment generating function through the excitation map


@dataclass(frozen=True)
class MgfPathwayReport:
    lambdas: np.ndarray
    sector_side: np.ndarray
    excitation_side: np.ndarray
    sandwich_lower: np.ndarray
    sandwich_upper: np.ndarray
    lower_gap_exponent: float
    upper_gap_exponent: float

    @property
    def max_relative_discrepancy(self) -> float:
        return float(np.max(np.abs(self.sector_side - self.excitation_side) / np.abs(self.sector_side)))


def _fit_exponent(lams, gaps) -> float:
    mask = (lams > 0) & (np.abs(gaps) > 1e-14)
    if mask.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(lams[mask]), np.log(np.abs(gaps[mask])), 1)[0])


def mgf_pathway_check(lambdas, N: int, observable: Observable, potential: Potential, lattice, *,
                      tol: float = solver.EXPM_TOL, dense_limit: int = solver.DENSE_LIMIT) -> MgfPathwayReport:
    """Moment generating function of the centered observable sum, computed two ways.

    The sector side exponentiates ``dGamma(O - <O>_0)`` on the ``N``-particle
    ground state; the excitation side exponentiates ``sqrt(N) phi_+(g) + B`` on
    its image under the excitation map.  The sandwich values replace ``B`` by
    ``-+2 ||O|| N_+`` between two half-exponentials of ``sqrt(N) phi_+(g)``;
    the exponents report how the log-gaps to the exact value scale in ``lambda``.
    """
    lams = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if np.any(lams < 0):
        raise ValidationError("lambda must be >= 0")
    system = ExcitationSystem(potential, N, enumerate_capped(lattice, N, N))
    sector = system.emap.sector
    psi = solver.ground_state(system.H, dense_limit=dense_limit).vector
    xi = system.emap.apply(psi)
    dG = assemble_one_body(observable.centered, sector)
    phi = np.sqrt(N) * assemble_phi_plus(observable.g_hat, system.basis, N)
    B = assemble_one_body(observable.excitation_block, system.basis)
    Np = number_plus(system.basis)
    onorm = observable.op_norm

    def mgf(A, vec, lam):
        return np.vdot(vec, solver.expm_multiply(A, vec, lam, tol=tol)).real

    sec, exc, lo, hi = [], [], [], []
    for lam in lams:
        sec.append(mgf(dG, psi, lam))
        exc.append(mgf(phi + B, xi, lam))
        half = solver.expm_multiply(phi, xi, lam / 2, tol=tol)
        lo.append(np.vdot(half, solver.expm_multiply(Np, half, -2 * lam * onorm, tol=tol)).real)
        hi.append(np.vdot(half, solver.expm_multiply(Np, half, 2 * lam * onorm, tol=tol)).real)
    sec, exc, lo, hi = map(np.array, (sec, exc, lo, hi))
    return MgfPathwayReport(
        lams, sec, exc, lo, hi,
        lower_gap_exponent=_fit_exponent(lams, np.log(exc) - np.log(lo)),
        upper_gap_exponent=_fit_exponent(lams, np.log(hi) - np.log(exc)),
    )
