"""Momentum lattice, interaction potential and one-body observable.

Everything here is a small immutable value type.  Modes are integer vectors
``n`` with physical momentum ``p = 2*pi*n``; arrays indexed by "mode" always
follow the ordering of :attr:`MomentumLattice.modes`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import AsymmetricCoefficient, NegativeCoefficient, NonHermitian, ValidationError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class MomentumLattice:
    """Torus momenta ``2*pi*n`` with every component of ``n`` in ``[-cutoff, cutoff]``.

    Attributes
    ----------
    dimension : int
    cutoff : int
    modes : ndarray, shape (M, d)
        Integer vectors in lexicographic order.
    zero_index : int
    pair_map : ndarray, shape (M,)
        ``pair_map[i]`` is the index of ``-modes[i]``.
    """

    dimension: int
    cutoff: int
    modes: np.ndarray = field(repr=False)
    zero_index: int
    pair_map: np.ndarray = field(repr=False)
    _lookup: dict = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.modes)

    @property
    def momenta(self) -> np.ndarray:
        return TWO_PI * self.modes

    @property
    def p_squared(self) -> np.ndarray:
        return (TWO_PI ** 2) * np.sum(self.modes ** 2, axis=1).astype(float)

    @property
    def excitation_indices(self) -> np.ndarray:
        """Lattice indices of all nonzero momenta, in lattice order."""
        return np.array([i for i in range(self.size) if i != self.zero_index], dtype=int)

    def index(self, n) -> int | None:
        """Index of integer vector ``n``, or None when it lies outside the lattice."""
        return self._lookup.get(tuple(int(c) for c in np.atleast_1d(n)))

    def add(self, i: int, j: int) -> int | None:
        return self.index(self.modes[i] + self.modes[j])

    def sub(self, i: int, j: int) -> int | None:
        return self.index(self.modes[i] - self.modes[j])


def build_lattice(d: int, cutoff: int) -> MomentumLattice:
    if d not in (1, 2, 3):
        raise ValidationError(f"dimension must be 1, 2 or 3, got {d}")
    if int(cutoff) < 1:
        raise ValidationError(f"cutoff must be >= 1, got {cutoff}")
    cutoff = int(cutoff)
    rng = range(-cutoff, cutoff + 1)
    modes = np.array(list(itertools.product(rng, repeat=d)), dtype=int)
    lookup = {tuple(int(c) for c in n): i for i, n in enumerate(modes)}
    zero_index = lookup[(0,) * d]
    pair_map = np.array([lookup[tuple(int(-c) for c in n)] for n in modes], dtype=int)
    return MomentumLattice(d, cutoff, modes, zero_index, pair_map, lookup)


@dataclass(frozen=True)
class Potential:
    """Fourier coefficients of the pair potential, one per lattice mode.

    Coefficients are zero outside the lattice (compact support).
    """

    coefficients: np.ndarray
    l1_norm: float
    v0: float

    def at(self, lattice: MomentumLattice, n) -> float:
        i = lattice.index(n)
        return 0.0 if i is None else float(self.coefficients[i])


def validate_potential(coeffs: Sequence[float], lattice: MomentumLattice) -> Potential:
    v = np.asarray(coeffs, dtype=float)
    if v.shape != (lattice.size,):
        raise ValidationError(f"expected {lattice.size} potential coefficients, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("potential coefficients must be finite")
    if np.any(v < 0):
        bad = int(np.argmax(v < 0))
        raise NegativeCoefficient(f"v_hat({lattice.modes[bad].tolist()}) = {v[bad]} < 0")
    asym = np.abs(v - v[lattice.pair_map])
    if np.any(asym > 0):
        bad = int(np.argmax(asym))
        raise AsymmetricCoefficient(
            f"v_hat({lattice.modes[bad].tolist()}) != v_hat({(-lattice.modes[bad]).tolist()})"
        )
    v.setflags(write=False)
    return Potential(v, float(np.sum(np.abs(v))), float(v[lattice.zero_index]))


def potential_preset(spec: Mapping, lattice: MomentumLattice) -> Potential:
    """Build a potential from a config table.

    Recognised forms: ``{"coefficients": [...]}``, ``{"preset": "zero"}``,
    ``{"preset": "constant", "scale": s}`` (``s`` on every mode) and
    ``{"preset": "shell", "scale": s, "radius": r}`` (``s`` on every mode with
    ``|n| <= r``, zero mode included).
    """
    if "coefficients" in spec:
        return validate_potential(spec["coefficients"], lattice)
    preset = spec.get("preset")
    scale = float(spec.get("scale", 1.0))
    if preset == "zero":
        v = np.zeros(lattice.size)
    elif preset == "constant":
        v = np.full(lattice.size, scale)
    elif preset == "shell":
        radius = float(spec.get("radius", 1.0))
        norms = np.sqrt(np.sum(lattice.modes ** 2, axis=1))
        v = np.where(norms <= radius + 1e-12, scale, 0.0)
    else:
        raise ValidationError(f"unknown potential preset {preset!r}")
    return validate_potential(v, lattice)


@dataclass(frozen=True)
class Observable:
    """A one-body operator in the plane-wave basis.

    ``matrix[p, q] = <phi_p, O phi_q>``.  ``centered`` subtracts the condensate
    expectation ``matrix[0, 0]`` from the diagonal and ``g_hat`` is the column
    ``matrix[p, 0]`` restricted to the excitation modes; ``excitation_block``
    is ``centered`` restricted to excitation rows and columns.
    """

    matrix: np.ndarray
    centered: np.ndarray
    condensate_mean: float
    g_hat: np.ndarray
    excitation_block: np.ndarray
    op_norm: float
    triple_norm: float

    @property
    def g_norm_sq(self) -> float:
        return float(np.vdot(self.g_hat, self.g_hat).real)


def _mode_shift_matrix(lattice: MomentumLattice, k, coeff_plus, coeff_minus) -> np.ndarray:
    """Matrix with ``coeff_plus`` at (p, q) when p - q = 2*pi*k and ``coeff_minus`` when p - q = -2*pi*k."""
    k = np.asarray(k, dtype=int)
    if k.shape != (lattice.dimension,) or not np.any(k):
        raise ValidationError(f"mode vector must be a nonzero {lattice.dimension}-vector, got {k.tolist()}")
    out = np.zeros((lattice.size, lattice.size), dtype=complex)
    for q in range(lattice.size):
        up = lattice.index(lattice.modes[q] + k)
        down = lattice.index(lattice.modes[q] - k)
        if up is not None:
            out[up, q] += coeff_plus
        if down is not None:
            out[down, q] += coeff_minus
    return out


def triple_norm(matrix: np.ndarray, lattice: MomentumLattice) -> float:
    """Largest singular value of ``(1 + p^2) O (1 + q^2)^-1``."""
    w = 1.0 + lattice.p_squared
    weighted = (w[:, None] * np.asarray(matrix)) / w[None, :]
    return float(np.linalg.norm(weighted, 2))


def build_observable(spec, lattice: MomentumLattice, *, hermitian_tol: float = 1e-10) -> Observable:
    """Build an :class:`Observable` from a matrix or a named preset.

    ``spec`` is either an ``(M, M)`` array or a mapping with ``preset`` in
    ``{"cos-mode", "sin-mode", "identity"}`` and, for the mode presets, ``k``
    (integer vector; multiplication by ``cos(2 pi k.x)`` resp. ``sin``).  A
    mapping may instead carry ``matrix`` (real part) and optional ``matrix_im``.
    """
    if isinstance(spec, Mapping):
        preset = spec.get("preset")
        if "matrix" in spec:
            mat = np.asarray(spec["matrix"], dtype=complex)
            if "matrix_im" in spec:
                mat = mat + 1j * np.asarray(spec["matrix_im"], dtype=float)
        elif preset == "identity":
            mat = np.eye(lattice.size, dtype=complex)
        elif preset == "cos-mode":
            mat = _mode_shift_matrix(lattice, spec.get("k", [1] * lattice.dimension), 0.5, 0.5)
        elif preset == "sin-mode":
            mat = _mode_shift_matrix(lattice, spec.get("k", [1] * lattice.dimension), -0.5j, 0.5j)
        else:
            raise ValidationError(f"unknown observable preset {preset!r}")
    else:
        mat = np.asarray(spec, dtype=complex)
    if mat.shape != (lattice.size, lattice.size):
        raise ValidationError(f"observable must be {lattice.size}x{lattice.size}, got {mat.shape}")
    dev = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
    if dev > hermitian_tol:
        raise NonHermitian(f"observable deviates from Hermitian by {dev:.3e}")
    mat = 0.5 * (mat + mat.conj().T)

    z = lattice.zero_index
    mean = float(mat[z, z].real)
    centered = mat - mean * np.eye(lattice.size)
    exc = lattice.excitation_indices
    g_hat = mat[exc, z].copy()
    block = centered[np.ix_(exc, exc)].copy()
    for a in (mat, centered, g_hat, block):
        a.setflags(write=False)
    return Observable(
        matrix=mat,
        centered=centered,
        condensate_mean=mean,
        g_hat=g_hat,
        excitation_block=block,
        op_norm=float(np.linalg.norm(mat, 2)),
        triple_norm=triple_norm(mat, lattice),
    )
