"""Closed-form Bogoliubov theory on the excitation modes.

All vectors here are indexed by excitation mode, in the order of
``MomentumLattice.excitation_indices``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CapTooSmall
from .fock import CappedBasis
from .model import MomentumLattice, Observable, Potential

CONVENTIONS = ("paired", "literal")
TAIL_TOL = 1e-8


def _exc_arrays(potential: Potential, lattice: MomentumLattice):
    exc = lattice.excitation_indices
    return lattice.p_squared[exc], potential.coefficients[exc]


def _pair_positions(lattice: MomentumLattice) -> np.ndarray:
    """Position of ``-p`` within the excitation ordering, for each excitation mode."""
    exc = lattice.excitation_indices
    where = {int(m): c for c, m in enumerate(exc)}
    return np.array([where[int(lattice.pair_map[m])] for m in exc], dtype=int)


def solve_mu(potential: Potential, lattice: MomentumLattice) -> np.ndarray:
    """Squeezing parameters ``mu_p = atanh(-v/(p^2 + v)) / 2`` (zero where ``v = 0``)."""
    p2, v = _exc_arrays(potential, lattice)
    return 0.5 * np.arctanh(-v / (p2 + v))


def dispersion(potential: Potential, lattice: MomentumLattice) -> np.ndarray:
    """Quasiparticle energies ``E(p) = sqrt(p^4 + 2 p^2 v(p))``."""
    p2, v = _exc_arrays(potential, lattice)
    return np.sqrt(p2 * p2 + 2.0 * p2 * v)


def symplectic_block(p2: float, v: float) -> np.ndarray:
    """Dynamical matrix of one ``(a_p, a_-p^*)`` pair; eigenvalues are ``+-E(p)``."""
    return np.array([[p2 + v, v], [-v, -(p2 + v)]], dtype=float)


def transformed_f(observable: Observable, mu: np.ndarray, lattice: MomentumLattice) -> dict:
    """Bogoliubov-rotated observable column under both readings of the conjugation term.

    ``paired``: ``cosh(mu_p) g(p) + sinh(mu_p) conj(g(-p))``;
    ``literal``: ``cosh(mu_p) g(p) + sinh(mu_p) conj(g(p))``.
    The two coincide when ``g(p) = g(-p)`` is real.
    """
    g = np.asarray(observable.g_hat)
    pair = _pair_positions(lattice)
    mu_minus = mu[pair]
    return {
        "paired": np.cosh(mu) * g + np.sinh(mu_minus) * np.conj(g[pair]),
        "literal": np.cosh(mu) * g + np.sinh(mu_minus) * np.conj(g),
    }


def depletion(mu) -> float:
    return float(np.sum(np.sinh(np.asarray(mu)) ** 2))


def bogoliubov_energy_candidates(mu, potential: Potential, lattice: MomentumLattice) -> list:
    """Two closed forms for the ground energy of the quadratic operator.

    ``cross_term`` is ``-sum_p E(p) cosh(mu_p) sinh(mu_p)``; ``half_sum`` is
    ``sum_p (E(p) - p^2 - v(p)) / 2``.  Only the eigensolver decides which is right.
    """
    p2, v = _exc_arrays(potential, lattice)
    E = np.sqrt(p2 * p2 + 2.0 * p2 * v)
    mu = np.asarray(mu)
    return [
        ("cross_term", float(-np.sum(E * np.cosh(mu) * np.sinh(mu)))),
        ("half_sum", float(0.5 * np.sum(E - p2 - v))),
    ]


@dataclass(frozen=True)
class QuasiFreeState:
    vector: np.ndarray
    tail_mass: float
    cap_too_small: bool


def quasifree_ground_state(mu, basis: CappedBasis, *, tail_tol: float = TAIL_TOL) -> QuasiFreeState:
    """Product of two-mode squeezed vacua over the pairs ``{p, -p}``.

    The amplitude of ``n_p = n_-p = n`` is ``tanh(mu_p)^n / cosh(mu_p)`` for each
    unordered pair; states violating pair balance get zero.  The vector is
    renormalized after the basis caps, and the discarded weight is reported.
    """
    lat = basis.lattice
    mu = np.asarray(mu, dtype=float)
    pair = _pair_positions(lat)
    if len(basis.modes) != len(mu) or np.any(basis.modes != lat.excitation_indices):
        raise ValueError("the basis must span all excitation modes in lattice order")
    first = np.array([c for c in range(len(mu)) if c < pair[c]], dtype=int)
    second = pair[first]
    n = basis.states.astype(int)
    balanced = np.all(n[:, first] == n[:, second], axis=1)
    t = np.tanh(mu[first])
    c0 = 1.0 / np.cosh(mu[first])
    k = n[:, first]
    amp = np.prod(c0[None, :] * t[None, :] ** k, axis=1)
    vec = np.where(balanced, amp, 0.0)
    kept = float(np.sum(vec ** 2))
    tail = max(0.0, 1.0 - kept)
    too_small = tail > tail_tol
    if too_small:
        warnings.warn(f"occupation caps discard tail mass {tail:.2e} > {tail_tol:.0e}", CapTooSmall, stacklevel=2)
    return QuasiFreeState(vec / np.sqrt(kept), tail, bool(too_small))


@dataclass(frozen=True)
class BogoliubovData:
    modes: np.ndarray
    mu: np.ndarray
    dispersion: np.ndarray
    g_hat: np.ndarray
    f: dict
    f_norm_sq: dict
    convention: str
    depletion: float
    energy_candidates: list

    @property
    def f_active(self) -> np.ndarray:
        return self.f[self.convention]

    @property
    def f_norm_sq_active(self) -> float:
        return self.f_norm_sq[self.convention]

    def with_convention(self, convention: str) -> "BogoliubovData":
        if convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {convention!r}")
        return BogoliubovData(**{**self.__dict__, "convention": convention})

    def to_dict(self) -> dict:
        def cplx(z):
            z = np.asarray(z, dtype=complex)
            return {"re": z.real.tolist(), "im": z.imag.tolist()}

        return {
            "modes": self.modes.tolist(),
            "mu": self.mu.tolist(),
            "dispersion": self.dispersion.tolist(),
            "g_hat": cplx(self.g_hat),
            "f": {k: cplx(v) for k, v in self.f.items()},
            "f_norm_sq": dict(self.f_norm_sq),
            "active_convention": self.convention,
            "depletion": self.depletion,
            "energy_candidates": [{"label": k, "value": v} for k, v in self.energy_candidates],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, **kw)


def bogoliubov_data(potential: Potential, observable: Observable, lattice: MomentumLattice,
                    convention: str = "paired") -> BogoliubovData:
    mu = solve_mu(potential, lattice)
    f = transformed_f(observable, mu, lattice)
    return BogoliubovData(
        modes=lattice.modes[lattice.excitation_indices],
        mu=mu,
        dispersion=dispersion(potential, lattice),
        g_hat=np.asarray(observable.g_hat),
        f=f,
        f_norm_sq={k: float(np.vdot(v, v).real) for k, v in f.items()},
        convention=convention,
        depletion=depletion(mu),
        energy_candidates=bogoliubov_energy_candidates(mu, potential, lattice),
    )
