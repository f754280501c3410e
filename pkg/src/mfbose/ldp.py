"""Large-deviation quantities of a centered one-body observable in the ``N``-particle ground state.

Conventions
-----------
``S = dGamma(O - <phi_0, O phi_0>)`` is the centered observable summed over all
particles and ``O_N = S / N``.  The scaled cumulant generating function is

    Lambda_N(lam) = N^-1 ln <psi_N, exp(lam S) psi_N>,

with the total sum (no ``1/N``) in the exponent, so that its small-``lam``
behaviour is ``lam^2 ||f||^2 / 2``.  Cumulants are reported as ``kappa_j(S) / N``.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.stats import norm

from . import solver
from .bogoliubov import CONVENTIONS, bogoliubov_data
from .errors import IdentityAssertionError, ValidationError
from .fock import assemble_hamiltonian, assemble_one_body, enumerate_sector
from .model import MomentumLattice, Observable, Potential

CHERNOFF_TOL = 1e-10
CONVEXITY_TOL = 1e-10

SCGF_HEADER = (
    "Lambda_N(lam) = N^-1 ln <psi_N, exp(lam * S) psi_N> with S = sum_j (O_j - <phi_0, O phi_0>) "
    "(total sum in the exponent); cumulants are kappa_j(S) / N; O_N = S / N."
)


@dataclass(eq=False)
class ObservableLaw:
    """Ground state of the ``N``-particle Hamiltonian and the centered observable sum on it."""

    N: int
    psi: np.ndarray
    S: object  # sparse operator
    energy: float
    gap: float
    dense_limit: int = solver.DENSE_LIMIT

    @cached_property
    def measure(self):
        return solver.spectral_measure(self.S, self.psi, dense_limit=self.dense_limit)


def observable_law(potential: Potential, observable: Observable, lattice: MomentumLattice, N: int, *,
                   tol: float = solver.EIG_TOL, dense_limit: int = solver.DENSE_LIMIT) -> ObservableLaw:
    sector = enumerate_sector(lattice, N)
    gs = solver.ground_state(assemble_hamiltonian(potential, sector), tol=tol, dense_limit=dense_limit)
    S = assemble_one_body(observable.centered, sector)
    return ObservableLaw(N, gs.vector, S, gs.energy, gs.gap, dense_limit)


# ---------------------------------------------------------------------------
# generating function and cumulants


@dataclass(frozen=True)
class ScgfResult:
    lambdas: np.ndarray
    values: np.ndarray
    convex: bool
    min_second_difference: float


def _slope_increments(lams, vals) -> np.ndarray:
    slopes = np.diff(vals) / np.diff(lams)
    return np.diff(slopes)


def scgf(psi, S, lambdas, N: int, *, tol: float = solver.EXPM_TOL) -> ScgfResult:
    """``Lambda_N`` on a grid of ``lam >= 0`` via ``2/N ln ||exp(lam S / 2) psi||``."""
    lams = np.asarray(lambdas, dtype=float)
    if lams.size == 0:
        raise ValidationError("lambda grid must be nonempty")
    if np.any(lams < 0):
        raise ValidationError("lambda grid must be >= 0")
    psi = np.asarray(psi)
    vals = np.array(
        [0.0 if lam == 0 else 2.0 / N * np.log(np.linalg.norm(solver.expm_multiply(S, psi, lam / 2, tol=tol)))
         for lam in lams]
    )
    order = np.argsort(lams)
    inc = _slope_increments(lams[order], vals[order]) if lams.size >= 3 else np.zeros(0)
    mind = float(inc.min()) if inc.size else 0.0
    return ScgfResult(lams, vals, bool(mind >= -CONVEXITY_TOL), mind)


def raw_moments(psi, S, order: int = 4) -> np.ndarray:
    """``<psi, S^k psi>`` for ``k = 1..order`` by repeated sparse application."""
    psi = np.asarray(psi)
    out = []
    v = psi
    vs = [psi]
    for k in range(1, order + 1):
        v = S @ v
        vs.append(v)
    for k in range(1, order + 1):
        a, b = (k + 1) // 2, k // 2
        out.append(np.vdot(vs[a], vs[b]).real)
    return np.array(out)


def cumulants(psi, S, N: int, order: int = 4) -> np.ndarray:
    """``kappa_j(S) / N`` for ``j = 1..order`` (``order <= 4``)."""
    if not 1 <= order <= 4:
        raise ValidationError("cumulant order must be between 1 and 4")
    m1, m2, m3, m4 = raw_moments(psi, S, 4)
    k = np.array([
        m1,
        m2 - m1 ** 2,
        m3 - 3 * m2 * m1 + 2 * m1 ** 3,
        m4 - 4 * m3 * m1 - 3 * m2 ** 2 + 12 * m2 * m1 ** 2 - 6 * m1 ** 4,
    ])
    return k[:order] / N


def second_derivative_fd(psi, S, N: int, *, step: float = 1e-3, tol: float = 1e-13) -> float:
    """``Lambda_N''(0)`` from a central difference (equals ``Var(S) / N``)."""
    psi = np.asarray(psi)
    side = [2.0 / N * np.log(np.linalg.norm(solver.expm_multiply(S, psi, sgn * step / 2, tol=tol))) for sgn in (1, -1)]
    return float((side[0] + side[1]) / step ** 2)


# ---------------------------------------------------------------------------
# tails, Legendre transform and Chernoff


def _atom_tol(measure) -> float:
    scale = float(np.max(np.abs(measure.points))) if hasattr(measure, "points") and len(measure.points) else 1.0
    return 1e-9 * max(1.0, scale)


def tail_probabilities(measure, N: int, x_grid, *, strict: bool = True) -> np.ndarray:
    """``P[O_N > x]`` (``strict``) or ``P[O_N >= x]`` from the spectral measure of ``S``.

    Atoms within a relative ``1e-9`` of the threshold ``N x`` count as equal to it.
    """
    x = np.asarray(x_grid, dtype=float)
    if x.size == 0:
        raise ValidationError("x grid must be nonempty")
    if isinstance(measure, solver.KpmMeasure):
        warnings.warn("tail probabilities from the kernel-polynomial path are resolution limited", stacklevel=2)
        return measure.tail(N * x)
    return measure.tail(N * x, strict=strict, atol=_atom_tol(measure))


@dataclass(frozen=True)
class LegendreResult:
    x: np.ndarray
    values: np.ndarray
    argmax_lambda: np.ndarray
    at_boundary: np.ndarray


def legendre(values, lambdas, x_grid) -> LegendreResult:
    """``max_lam (lam x - Lambda(lam))`` over the grid: a lower bound on the true supremum."""
    lams = np.asarray(lambdas, dtype=float)
    vals = np.asarray(values, dtype=float)
    x = np.asarray(x_grid, dtype=float)
    table = np.multiply.outer(x, lams) - vals[None, :]
    idx = np.argmax(table, axis=1)
    top = table[np.arange(len(x)), idx]
    at_boundary = lams[idx] == lams.max()
    if np.any(at_boundary & (x > 0)):
        warnings.warn("Legendre supremum attained at the largest grid lambda; extend the grid", stacklevel=2)
    return LegendreResult(x, top, lams[idx], at_boundary)


@dataclass(frozen=True)
class ChernoffResult:
    x: np.ndarray
    empirical_rate: np.ndarray
    legendre: np.ndarray
    margins: np.ndarray
    vacuous: np.ndarray

    @property
    def min_margin(self) -> float:
        m = self.margins[~self.vacuous]
        return float(m.min()) if m.size else float("inf")


def empirical_rate(tails, N: int) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return -np.log(np.asarray(tails, dtype=float)) / N


def chernoff_check(values, lambdas, tails_ge, N: int, x_grid, *, tol: float = CHERNOFF_TOL,
                   raise_on_violation: bool = True) -> ChernoffResult:
    """Margins ``-N^-1 ln P[O_N >= x] - max_lam (lam x - Lambda_N(lam))`` over ``lam >= 0`` in the grid.

    Cells with zero probability are vacuous (infinite empirical rate).
    """
    x = np.asarray(x_grid, dtype=float)
    lams = np.asarray(lambdas, dtype=float)
    vals = np.asarray(values, dtype=float)
    keep = lams >= 0
    bound = np.max(np.multiply.outer(x, lams[keep]) - vals[keep][None, :], axis=1)
    rate = empirical_rate(tails_ge, N)
    vacuous = ~np.isfinite(rate)
    margins = np.where(vacuous, np.inf, rate - bound)
    result = ChernoffResult(x, rate, bound, margins, vacuous)
    if raise_on_violation and result.min_margin < -tol:
        raise IdentityAssertionError(f"Chernoff bound at N={N}", -result.min_margin, tol)
    return result


# ---------------------------------------------------------------------------
# comparisons with the Bogoliubov predictions


def fit_power(x, y) -> float:
    """Exponent of a least-squares power law ``|y| ~ c x^a`` over entries with ``x, y != 0``."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    mask = (x > 0) & (y > 0) & np.isfinite(y)
    if mask.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[mask]), np.log(y[mask]), 1)[0])


def theorem_bound_comparison(x_grid, f_norm_sq: float, triple_norm: float, empirical) -> dict:
    """Empirical rate against the leading ``x^2 / (2 ||f||^2)`` term.

    Also returns the correction shapes ``x^3 |||O|||^3 / ||f||^3`` and
    ``x^{5/2}`` (without the unknown constants) and the fitted exponent of the
    residual in ``x``.
    """
    if f_norm_sq <= 0:
        raise ValidationError("||f||^2 must be positive")
    x = np.asarray(x_grid, dtype=float)
    emp = np.asarray(empirical, dtype=float)
    lead = x ** 2 / (2 * f_norm_sq)
    resid = emp - lead
    return {
        "x": x,
        "empirical_rate": emp,
        "leading": lead,
        "residual": resid,
        "upper_shape": x ** 3 * triple_norm ** 3 / f_norm_sq ** 1.5,
        "lower_shape": x ** 2.5,
        "residual_exponent": fit_power(x, resid),
    }


def clt_distance(measure, N: int, f_norm_sq: float) -> float:
    """Kolmogorov distance between the law of ``sqrt(N) O_N`` and ``N(0, ||f||^2)``.

    Both one-sided limits of the step CDF are compared at every atom.  With
    ``||f||^2 = 0`` the reference is the point mass at zero.
    """
    pts = np.asarray(measure.points) / np.sqrt(N)
    w = np.asarray(measure.weights)
    right = np.cumsum(w)
    left = right - w
    if f_norm_sq <= 0:
        ref = (pts >= 0).astype(float)
        ref_left = (pts > 0).astype(float)
    else:
        ref = ref_left = norm.cdf(pts, scale=np.sqrt(f_norm_sq))
    return float(max(np.max(np.abs(right - ref)), np.max(np.abs(left - ref_left))))


def extrapolate_inverse_N(Ns, values, degree: int = 2) -> dict:
    """Polynomial fit in ``1/N``; the constant term is the ``N -> infinity`` estimate.

    With ``len(Ns) == degree + 1`` this is Richardson extrapolation; with more
    points a least-squares fit whose residual is reported.
    """
    Ns = np.asarray(Ns, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(Ns) < 2:
        return {"limit": float("nan"), "coefficients": [], "residual": float("nan"), "skipped": True}
    degree = min(degree, len(Ns) - 1)
    V = np.vander(1.0 / Ns, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    resid = float(np.max(np.abs(V @ coef - y)))
    return {"limit": float(coef[0]), "coefficients": coef.tolist(), "residual": resid, "skipped": False}


# ---------------------------------------------------------------------------
# per-N report and the N sweep


@dataclass
class LdpReport:
    N: int
    lambdas: np.ndarray
    scgf: np.ndarray
    cumulants: np.ndarray
    x: np.ndarray
    tails: np.ndarray
    tails_ge: np.ndarray
    empirical_rate: np.ndarray
    legendre: np.ndarray
    bogoliubov_rate: np.ndarray
    chernoff_margins: np.ndarray
    clt_distance: float
    var_per_N: float
    f_norm_sq: float
    comparison: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_dict(self) -> dict:
        def fl(a):
            return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]

        return {
            "convention": SCGF_HEADER,
            "config_hash": self.config_hash,
            "N": self.N,
            "lambda": fl(self.lambdas),
            "scgf": fl(self.scgf),
            "cumulants": fl(self.cumulants),
            "var_per_N": self.var_per_N,
            "f_norm_sq": self.f_norm_sq,
            "x": fl(self.x),
            "tail_gt": fl(self.tails),
            "tail_ge": fl(self.tails_ge),
            "empirical_rate": fl(self.empirical_rate),
            "legendre": fl(self.legendre),
            "bogoliubov_rate": fl(self.bogoliubov_rate),
            "chernoff_margin": fl(self.chernoff_margins),
            "clt_kolmogorov": self.clt_distance,
            "residual_exponent": self.comparison.get("residual_exponent"),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def lambda_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["# " + SCGF_HEADER + f" config_hash={self.config_hash}"])
        w.writerow(["N", "lambda", "Lambda_N"])
        for lam, v in zip(self.lambdas, self.scgf):
            w.writerow([self.N, repr(float(lam)), f"{v:.15e}"])
        return buf.getvalue()

    def x_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"# config_hash={self.config_hash}"])
        w.writerow(["N", "x", "tail_gt", "tail_ge", "empirical_rate", "legendre", "bogoliubov_rate", "chernoff_margin"])
        for row in zip(self.x, self.tails, self.tails_ge, self.empirical_rate, self.legendre, self.bogoliubov_rate,
                       self.chernoff_margins):
            w.writerow([self.N, repr(float(row[0]))] + [f"{v:.15e}" for v in row[1:]])
        return buf.getvalue()


def ldp_report(law: ObservableLaw, lambdas, x_grid, f_norm_sq: float, triple_norm: float, *,
               tol: float = solver.EXPM_TOL, config_hash: str = "") -> LdpReport:
    """Every LDP quantity for one ``N``; raises if the Chernoff inequality is violated."""
    N = law.N
    x = np.asarray(x_grid, dtype=float)
    if x.size == 0:
        raise ValidationError("x grid must be nonempty")
    sc = scgf(law.psi, law.S, lambdas, N, tol=tol)
    cum = cumulants(law.psi, law.S, N)
    gt = tail_probabilities(law.measure, N, x, strict=True)
    ge = tail_probabilities(law.measure, N, x, strict=False)
    rate = empirical_rate(ge, N)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        leg = legendre(sc.values, sc.lambdas, x).values
    ch = chernoff_check(sc.values, sc.lambdas, ge, N, x)
    comp = theorem_bound_comparison(x, f_norm_sq, triple_norm, rate) if f_norm_sq > 0 else {}
    return LdpReport(
        N=N, lambdas=sc.lambdas, scgf=sc.values, cumulants=cum, x=x, tails=gt, tails_ge=ge,
        empirical_rate=rate, legendre=leg,
        bogoliubov_rate=x ** 2 / (2 * f_norm_sq) if f_norm_sq > 0 else np.full_like(x, np.inf),
        chernoff_margins=ch.margins, clt_distance=clt_distance(law.measure, N, f_norm_sq),
        var_per_N=float(cum[1]), f_norm_sq=f_norm_sq, comparison=comp, config_hash=config_hash,
    )


@dataclass
class SweepResult:
    Ns: list
    var_per_N: np.ndarray
    scgf: np.ndarray  # (len(Ns), len(lambdas))
    rate_ratio: np.ndarray  # (len(Ns), len(x_ref)): empirical rate / (x^2 / 2||f||^2)
    clt: np.ndarray
    x_ref: np.ndarray
    f_norm_sq: dict
    convention: str
    var_extrapolation: dict
    rate_extrapolation: dict
    reports: list
    notices: list = field(default_factory=list)

    @property
    def f_norm_sq_active(self) -> float:
        return self.f_norm_sq[self.convention]

    def summary(self) -> dict:
        fa = self.f_norm_sq_active
        return {
            "N": list(self.Ns),
            "var_per_N": self.var_per_N.tolist(),
            "f_norm_sq": dict(self.f_norm_sq),
            "active_convention": self.convention,
            "var_extrapolated": self.var_extrapolation,
            "var_relative_error": abs(self.var_extrapolation["limit"] - fa) / fa if fa else None,
            "x_ref": self.x_ref.tolist(),
            "rate_ratio": [[None if not np.isfinite(v) else float(v) for v in row] for row in self.rate_ratio],
            "rate_ratio_extrapolated": self.rate_extrapolation,
            "clt_kolmogorov": self.clt.tolist(),
            "notices": list(self.notices),
        }

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "var_per_N", "f_norm_sq", "clt_kolmogorov"] + [f"rate_ratio_x={x!r}" for x in self.x_ref.tolist()])
        for i, N in enumerate(self.Ns):
            w.writerow([N, f"{self.var_per_N[i]:.15e}", f"{self.f_norm_sq_active:.15e}", f"{self.clt[i]:.15e}"]
                       + [f"{v:.15e}" for v in self.rate_ratio[i]])
        return buf.getvalue()


def reference_window(f_norm_sq: float, triple_norm: float, points: int = 5) -> np.ndarray:
    """Evenly spaced ``x`` up to ``0.5 ||f||^2 / |||O|||``."""
    top = 0.5 * f_norm_sq / triple_norm
    return top * np.arange(1, points + 1) / points


def select_convention(var_limit: float, f_norm_sq: dict, default: str = "paired") -> str:
    """Convention whose ``||f||^2`` is closest to the extrapolated variance; ties keep ``default``."""
    errs = {k: abs(var_limit - v) for k, v in f_norm_sq.items()}
    best = min(errs.values())
    if abs(errs[default] - best) <= 1e-12 * max(1.0, abs(var_limit)):
        return default
    return min(errs, key=errs.get)


def n_sweep(potential: Potential, observable: Observable, lattice: MomentumLattice, N_list, lambdas, x_grid=None,
            *, x_ref=None, tol: float = solver.EIG_TOL, expm_tol: float = solver.EXPM_TOL,
            dense_limit: int = solver.DENSE_LIMIT, threads: int = 1, config_hash: str = "") -> SweepResult:
    """Per-``N`` LDP reports with ``1/N`` extrapolations and the ``f``-convention selection."""
    Ns = [int(n) for n in N_list]
    if Ns != sorted(Ns):
        raise ValidationError("N list must be ascending")
    bog = bogoliubov_data(potential, observable, lattice)
    fns = dict(bog.f_norm_sq)
    f_default = fns["paired"]
    if x_ref is None:
        x_ref = reference_window(f_default, observable.triple_norm) if f_default > 0 else np.array([0.1])
    x_ref = np.asarray(x_ref, dtype=float)
    x_all = np.union1d(np.asarray(x_grid if x_grid is not None else [], dtype=float), x_ref)

    def one(N):
        law = observable_law(potential, observable, lattice, N, tol=tol, dense_limit=dense_limit)
        return ldp_report(law, lambdas, x_all, f_default, observable.triple_norm, tol=expm_tol,
                          config_hash=config_hash)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(one, Ns))
    else:
        reports = [one(N) for N in Ns]

    var = np.array([r.var_per_N for r in reports])
    notices = []
    if len(Ns) < 2:
        notices.append("single N: extrapolation skipped")
    var_ex = extrapolate_inverse_N(Ns, var)
    conv = select_convention(var_ex["limit"], fns) if not var_ex["skipped"] else "paired"
    fa = fns[conv]
    ref_idx = np.searchsorted(x_all, x_ref)
    ratio = np.array([r.empirical_rate[ref_idx] / (x_ref ** 2 / (2 * fa)) if fa > 0 else np.full(len(x_ref), np.nan)
                      for r in reports])
    finite = np.all(np.isfinite(ratio), axis=1)
    rate_ex = (extrapolate_inverse_N(np.asarray(Ns)[finite], ratio[finite].mean(axis=1))
               if finite.sum() >= 2 else {"limit": float("nan"), "coefficients": [], "residual": float("nan"),
                                          "skipped": True})
    return SweepResult(
        Ns=Ns, var_per_N=var, scgf=np.array([r.scgf for r in reports]), rate_ratio=ratio,
        clt=np.array([r.clt_distance for r in reports]), x_ref=x_ref, f_norm_sq=fns, convention=conv,
        var_extrapolation=var_ex, rate_extrapolation=rate_ex, reports=reports, notices=notices,
    )
