"""Occupation-number bases and second-quantized operators as sparse matrices.

Two bases are used:

* :class:`SectorBasis` -- all occupations of the full lattice with fixed
  total particle number ``N``.
* :class:`CappedBasis` -- occupations of the excitation modes (zero mode
  removed) with total at most ``cap`` and each mode at most ``mode_cap``.
  With ``cap = mode_cap = N`` it is the truncated excitation Fock space and is
  in bijection with the ``N`` sector through ``n_0 = N - N_+``.

Operators are returned as ``scipy.sparse.csr_matrix``.  Ladder strings are
written left to right as in the formulas; the rightmost operator acts first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionOverflow, ValidationError
from .model import MomentumLattice, Potential

DEFAULT_MAX_DIM = 500_000

CREATE, ANNIHILATE = +1, -1


@dataclass(frozen=True, eq=False)
class _Basis:
    lattice: MomentumLattice
    modes: np.ndarray = field(repr=False)  # lattice index of each occupation column
    states: np.ndarray = field(repr=False)  # (dim, len(modes)) int16
    n_total_cap: int
    mode_cap: int

    def __post_init__(self):
        self.states.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    @cached_property
    def _index(self) -> dict:
        return {row.tobytes(): i for i, row in enumerate(self.states)}

    def lookup(self, state) -> int | None:
        key = np.asarray(state, dtype=np.int16).tobytes()
        return self._index.get(key)

    def column(self, lattice_index: int) -> int:
        hits = np.nonzero(self.modes == lattice_index)[0]
        if len(hits) == 0:
            raise ValidationError(f"lattice mode {lattice_index} is not part of this basis")
        return int(hits[0])

    @cached_property
    def n_plus(self) -> np.ndarray:
        """Number of particles outside the zero mode, per basis state."""
        cols = [c for c, m in enumerate(self.modes) if m != self.lattice.zero_index]
        return self.states[:, cols].sum(axis=1).astype(float)

    @cached_property
    def momentum(self) -> np.ndarray:
        """Total lattice momentum (integer vector) per basis state."""
        return self.states.astype(int) @ self.lattice.modes[self.modes]


@dataclass(frozen=True, eq=False)
class SectorBasis(_Basis):
    N: int = 0


@dataclass(frozen=True, eq=False)
class CappedBasis(_Basis):
    pass


def _count_capped(n_modes: int, total_max: int, mode_cap: int) -> int:
    # ways[t] = number of occupation vectors over the processed modes with total t
    ways = np.zeros(total_max + 1, dtype=object)
    ways[0] = 1
    for _ in range(n_modes):
        new = np.zeros_like(ways)
        for t in range(total_max + 1):
            if ways[t]:
                for k in range(min(mode_cap, total_max - t) + 1):
                    new[t + k] += ways[t]
        ways = new
    return int(sum(ways))


def _compositions(total: int, n_modes: int, mode_cap: int) -> Iterable[tuple]:
    """Vectors with the given total, first entry descending (reverse lexicographic)."""
    if n_modes == 0:
        if total == 0:
            yield ()
        return
    for first in range(min(total, mode_cap), -1, -1):
        rest = total - first
        if rest > mode_cap * (n_modes - 1):
            continue
        for tail in _compositions(rest, n_modes - 1, mode_cap):
            yield (first,) + tail


def enumerate_sector(lattice: MomentumLattice, N: int, *, max_dim: int | None = None) -> SectorBasis:
    """All occupations of the lattice with total ``N``, in lexicographic order."""
    if N < 0:
        raise ValidationError(f"N must be >= 0, got {N}")
    max_dim = max_dim or DEFAULT_MAX_DIM
    M = lattice.size
    dim = math.comb(N + M - 1, M - 1)
    if dim > max_dim:
        raise DimensionOverflow(
            f"sector dimension {dim} exceeds limit {max_dim}; reduce N or the lattice cutoff"
        )
    states = sorted(_compositions(N, M, N))
    arr = np.array(states, dtype=np.int16).reshape(len(states), M)
    return SectorBasis(lattice, np.arange(M), arr, N, N, N=N)


def enumerate_capped(
    lattice: MomentumLattice, cap: int, mode_cap: int, *, max_dim: int | None = None
) -> CappedBasis:
    """Excitation occupations with total <= ``cap`` and entries <= ``mode_cap``.

    Ordered by total occupation, then reverse lexicographically within a total
    (e.g. ``00, 10, 01, 20, 11, 02``).
    """
    if cap < 0 or mode_cap < 0:
        raise ValidationError("caps must be >= 0")
    max_dim = max_dim or DEFAULT_MAX_DIM
    modes = lattice.excitation_indices
    dim = _count_capped(len(modes), cap, mode_cap)
    if dim > max_dim:
        raise DimensionOverflow(
            f"capped basis dimension {dim} exceeds limit {max_dim}; reduce the caps or the lattice cutoff"
        )
    states = [s for t in range(cap + 1) for s in _compositions(t, len(modes), mode_cap)]
    arr = np.array(states, dtype=np.int16).reshape(len(states), len(modes))
    return CappedBasis(lattice, modes, arr, cap, mode_cap)


# ---------------------------------------------------------------------------
# assembly engine


def ladder_string(basis: _Basis, ops: Sequence[tuple[int, int]], coef: complex = 1.0):
    """COO triplets of ``coef * op_1 op_2 ... op_k`` on ``basis``.

    ``ops`` holds ``(column, CREATE|ANNIHILATE)`` pairs, ``column`` indexing
    the basis' occupation vector.  Transitions leaving the basis are dropped.
    """
    n = basis.states.astype(np.int64)
    amp = np.full(basis.dim, complex(coef)) if np.iscomplexobj(coef) else np.full(basis.dim, float(coef))
    alive = np.ones(basis.dim, dtype=bool)
    n = n.copy()
    for col, kind in reversed(ops):
        if kind == ANNIHILATE:
            occ = n[:, col]
            alive &= occ > 0
            amp = amp * np.sqrt(np.maximum(occ, 0))
            n[:, col] -= 1
        else:
            occ = n[:, col]
            amp = amp * np.sqrt(np.maximum(occ + 1, 0))
            n[:, col] += 1
    alive &= amp != 0
    cols = np.nonzero(alive)[0]
    index = basis._index
    new_states = n[cols].astype(np.int16)
    rows = np.fromiter(
        (index.get(row.tobytes(), -1) for row in new_states), dtype=np.int64, count=len(cols)
    )
    keep = rows >= 0
    return rows[keep], cols[keep], amp[cols[keep]]


def assemble(basis: _Basis, terms: Iterable[tuple[complex, Sequence[tuple[int, int]]]], *, hermitian=False):
    """Sum of ladder strings as a CSR matrix.

    With ``hermitian=True`` the result is replaced by ``(A + A^H) / 2``, which
    is exactly Hermitian in floating point.  Callers pass both members of each
    conjugate pair so the average does not change the operator.
    """
    rows, cols, vals = [], [], []
    for coef, ops in terms:
        if coef == 0:
            continue
        r, c, v = ladder_string(basis, ops, coef)
        rows.append(r)
        cols.append(c)
        vals.append(v)
    return _finish(basis.dim, rows, cols, vals, hermitian)


def _finish(dim, rows, cols, vals, hermitian):
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    if np.iscomplexobj(v) and not np.any(v.imag):
        v = v.real
    mat = sp.csr_matrix((v, (r, c)), shape=(dim, dim))
    mat.sum_duplicates()
    if hermitian:
        mat = hermitize(mat)
    return mat


def hermitize(mat: sp.spmatrix) -> sp.csr_matrix:
    out = ((mat + mat.conj().T) * 0.5).tocsr()
    out.sum_duplicates()
    out.eliminate_zeros()
    return out


def is_exactly_hermitian(mat) -> bool:
    diff = abs(sp.csr_matrix(mat) - sp.csr_matrix(mat).conj().T)
    return diff.nnz == 0 or float(diff.max()) == 0.0


def diag_of_nplus(basis: _Basis, fn: Callable[[np.ndarray], np.ndarray]) -> sp.csr_matrix:
    return sp.diags(fn(basis.n_plus)).tocsr()


def number_plus(basis: _Basis) -> sp.csr_matrix:
    return sp.diags(basis.n_plus).tocsr()


# ---------------------------------------------------------------------------
# physical operators


def assemble_one_body(matrix, basis: _Basis) -> sp.csr_matrix:
    """``sum_{p,q} matrix[p, q] a_p^* a_q`` over the basis' modes."""
    m = np.asarray(matrix)
    k = len(basis.modes)
    if m.shape != (k, k):
        raise ValidationError(f"one-body matrix shape {m.shape} does not match {k} basis modes")
    terms = []
    for p in range(k):
        for q in range(k):
            if m[p, q] != 0:
                terms.append((m[p, q], ((p, CREATE), (q, ANNIHILATE))))
    hermitian = bool(np.allclose(m, m.conj().T, atol=0, rtol=0))
    return assemble(basis, terms, hermitian=hermitian)


def kinetic(basis: _Basis) -> sp.csr_matrix:
    p2 = basis.lattice.p_squared[basis.modes]
    return sp.diags(basis.states.astype(float) @ p2).tocsr()


def assemble_hamiltonian(potential: Potential, basis: SectorBasis) -> sp.csr_matrix:
    """Kinetic plus mean-field pair interaction on the ``N`` sector.

    Only momentum transfers whose outgoing modes stay on the lattice are kept.
    """
    N = basis.N
    if N < 2:
        raise ValidationError(f"the Hamiltonian needs N >= 2, got {N}")
    lat = basis.lattice
    v = potential.coefficients
    pref = 1.0 / (2.0 * (N - 1))
    terms = []
    for k in np.nonzero(v)[0]:
        for p in range(lat.size):
            pk = lat.sub(p, k)
            if pk is None:
                continue
            for q in range(lat.size):
                qk = lat.add(q, k)
                if qk is None:
                    continue
                terms.append((pref * v[k], ((pk, CREATE), (qk, CREATE), (p, ANNIHILATE), (q, ANNIHILATE))))
    return (kinetic(basis) + assemble(basis, terms, hermitian=True)).tocsr()


def _pair_col(basis: CappedBasis, col: int) -> int:
    return basis.column(basis.lattice.pair_map[basis.modes[col]])


def assemble_quadratic_Q(potential: Potential, basis: CappedBasis, *, corrupt: bool = False) -> sp.csr_matrix:
    """Bogoliubov quadratic operator on the excitation space.

    ``sum_p (p^2 + v(p)) a_p^* a_p + v(p)/2 (a_p^* a_-p^* + a_p a_-p)``.
    ``corrupt`` is a fault-injection hook used to exercise the verification
    gate; it drops the factor 1/2 on the pairing term.
    """
    v = potential.coefficients[basis.modes]
    p2 = basis.lattice.p_squared[basis.modes]
    diag = sp.diags(basis.states.astype(float) @ (p2 + v))
    half = 1.0 if corrupt else 0.5
    terms = []
    for c in range(len(basis.modes)):
        if v[c] == 0:
            continue
        m = _pair_col(basis, c)
        terms.append((half * v[c], ((c, CREATE), (m, CREATE))))
        terms.append((half * v[c], ((c, ANNIHILATE), (m, ANNIHILATE))))
    return (diag + assemble(basis, terms, hermitian=True)).tocsr()


def b_operator(basis: CappedBasis, col: int, N: int) -> sp.csr_matrix:
    """``b_p = sqrt((N - N_+)/N) a_p`` (the square root acts after ``a_p``)."""
    a = assemble(basis, [(1.0, ((col, ANNIHILATE),))])
    return (diag_of_nplus(basis, lambda n: np.sqrt(np.clip(N - n, 0, None) / N)) @ a).tocsr()


def b_of(h, basis: CappedBasis, N: int) -> sp.csr_matrix:
    """``b(h) = sum_p conj(h_p) b_p``; ``b^*(h)`` is its adjoint."""
    h = np.asarray(h)
    out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex if np.iscomplexobj(h) else float)
    for c, hc in enumerate(h):
        if hc != 0:
            out = out + np.conj(hc) * b_operator(basis, c, N)
    return out.tocsr()


def a_of(h, basis: CappedBasis) -> sp.csr_matrix:
    """``a(h) = sum_p conj(h_p) a_p``."""
    terms = [(np.conj(hc), ((c, ANNIHILATE),)) for c, hc in enumerate(np.asarray(h)) if hc != 0]
    return assemble(basis, terms)


def assemble_phi_plus(h, basis: CappedBasis, N: int) -> sp.csr_matrix:
    """``phi_+(h) = b^*(h) + b(h)``; ``h`` is indexed by the basis' excitation columns."""
    h = np.asarray(h)
    if h.shape != (len(basis.modes),):
        raise ValidationError(f"h must have {len(basis.modes)} entries, got {h.shape}")
    b = b_of(h, basis, N)
    return hermitize(b + b.conj().T)


def assemble_i_phi_minus(h, basis: CappedBasis, N: int) -> sp.csr_matrix:
    """``i phi_-(h) = b(h) - b^*(h)`` (anti-Hermitian)."""
    b = b_of(np.asarray(h), basis, N)
    return (b - b.conj().T).tocsr()


@dataclass(frozen=True)
class RemainderParts:
    """The excitation remainder, assembled two independent ways.

    ``groups`` holds the term-by-term construction (pairing correction,
    number-dependent diagonal, cubic, quartic); ``transcribed`` is their sum and
    ``operational`` is ``U H U^* - N v(0)/2 - Q``.
    """

    groups: dict
    transcribed: sp.csr_matrix
    operational: sp.csr_matrix

    @property
    def discrepancy(self) -> float:
        d = abs(self.transcribed - self.operational)
        return float(d.max()) if d.nnz else 0.0


def _remainder_groups(potential: Potential, basis: CappedBasis, N: int) -> dict:
    lat = basis.lattice
    k = len(basis.modes)
    v = potential.coefficients
    vb = v[basis.modes]
    col_of = {int(m): c for c, m in enumerate(basis.modes)}
    Nf = float(N)

    # pairing correction: v(p)/2 [ N/(N-1) b*_p b*_-p - a*_p a*_-p ] + h.c.
    pair = sp.csr_matrix((basis.dim, basis.dim))
    for c in range(k):
        if vb[c] == 0:
            continue
        m = _pair_col(basis, c)
        bc = b_operator(basis, c, N)
        bm = b_operator(basis, m, N)
        aa = assemble(basis, [(1.0, ((c, CREATE), (m, CREATE)))])
        term = 0.5 * vb[c] * (Nf / (Nf - 1.0) * (bc.T @ bm.T) - aa)
        pair = pair + term + term.conj().T

    # number-dependent diagonal: -(N_+ - 1)/(N-1) sum_p v(p) a*_p a_p
    nv = basis.states.astype(float) @ vb
    diag = sp.diags(-(basis.n_plus - 1.0) / (Nf - 1.0) * nv).tocsr()

    # cubic: 1/(N-1) sum_{p,q} v(p) sqrt(N - N_+) a*_{p+q} a_p a_q + h.c.
    cubic_terms = []
    for cp in range(k):
        if vb[cp] == 0:
            continue
        for cq in range(k):
            s = lat.add(int(basis.modes[cp]), int(basis.modes[cq]))
            if s is None or s == lat.zero_index:
                continue
            cubic_terms.append((vb[cp], ((col_of[s], CREATE), (cp, ANNIHILATE), (cq, ANNIHILATE))))
    c_raw = assemble(basis, cubic_terms)
    c_raw = diag_of_nplus(basis, lambda n: np.sqrt(np.clip(Nf - n, 0, None))) @ c_raw / (Nf - 1.0)
    cubic = (c_raw + c_raw.conj().T).tocsr()

    # quartic among excitations, zero momentum transfer excluded
    quartic_terms = []
    pref = 1.0 / (2.0 * (Nf - 1.0))
    for cr in range(k):
        r = int(basis.modes[cr])
        for cp in range(k):
            p = int(basis.modes[cp])
            if p == r:
                continue
            kk = lat.sub(p, r)
            if kk is None or v[kk] == 0:
                continue
            for cq in range(k):
                q = int(basis.modes[cq])
                s = lat.index(lat.modes[p] + lat.modes[q] - lat.modes[r])
                if s is None or s == lat.zero_index:
                    continue
                quartic_terms.append(
                    (pref * v[kk], ((cr, CREATE), (col_of[s], CREATE), (cp, ANNIHILATE), (cq, ANNIHILATE)))
                )
    quartic = assemble(basis, quartic_terms, hermitian=True)
    return {"pairing": pair.tocsr(), "diagonal": diag, "cubic": cubic, "quartic": quartic}


def assemble_remainder_R(potential: Potential, basis: CappedBasis, N: int) -> RemainderParts:
    """Both constructions of the remainder on the full excitation space (cap = N)."""
    if basis.n_total_cap != N or basis.mode_cap != N:
        raise ValidationError("the remainder needs the full excitation space: cap = mode_cap = N")
    groups = _remainder_groups(potential, basis, N)
    transcribed = hermitize(sum(groups.values()))
    emap = excitation_unitary_map(enumerate_sector(basis.lattice, N), basis)
    G = emap.conjugate(assemble_hamiltonian(potential, emap.sector)) - 0.5 * N * potential.v0 * sp.identity(
        basis.dim
    )
    operational = hermitize(G - assemble_quadratic_Q(potential, basis))
    return RemainderParts(groups, transcribed, operational)


@dataclass(frozen=True, eq=False)
class ExcitationMap:
    """Relabeling ``|n_0, n_+> <-> |n_+>`` between the ``N`` sector and ``F^{<=N}``."""

    sector: SectorBasis
    capped: CappedBasis
    perm: np.ndarray  # capped index of each sector state

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        d = self.sector.dim
        return sp.csr_matrix((np.ones(d), (self.perm, np.arange(d))), shape=(d, d))

    def apply(self, psi) -> np.ndarray:
        out = np.zeros_like(np.asarray(psi))
        out[self.perm] = psi
        return out

    def apply_inverse(self, xi) -> np.ndarray:
        return np.asarray(xi)[self.perm]

    def conjugate(self, op) -> sp.csr_matrix:
        U = self.matrix
        return (U @ op @ U.T).tocsr()


def excitation_unitary_map(sector: SectorBasis, capped: CappedBasis | None = None) -> ExcitationMap:
    N = sector.N
    lat = sector.lattice
    if capped is None:
        capped = enumerate_capped(lat, N, N)
    if capped.dim != sector.dim:
        raise ValidationError("the capped basis must be the full excitation space (cap = mode_cap = N)")
    exc_cols = [int(c) for c in lat.excitation_indices]
    perm = np.empty(sector.dim, dtype=np.int64)
    for i, row in enumerate(sector.states):
        j = capped.lookup(row[exc_cols])
        if j is None:
            raise ValidationError("sector state has no image in the capped basis")
        perm[i] = j
    return ExcitationMap(sector, capped, perm)


def momentum_sector_indices(basis: _Basis, total=None) -> np.ndarray:
    """Indices of basis states with the given total momentum (default zero)."""
    target = np.zeros(basis.lattice.dimension, dtype=int) if total is None else np.asarray(total)
    return np.nonzero(np.all(basis.momentum == target, axis=1))[0]


def export_triplets(op, path) -> Path:
    """Write nonzero entries as ``row col re im`` lines (0-based), with a header comment."""
    coo = sp.coo_matrix(op)
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# shape {coo.shape[0]} {coo.shape[1]}\n# row col re im\n")
        order = np.lexsort((coo.col, coo.row))
        for r, c, v in zip(coo.row[order], coo.col[order], np.asarray(coo.data, dtype=complex)[order]):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")
    return path


def load_triplets(path) -> sp.csr_matrix:
    lines = Path(path).read_text().splitlines()
    shape = tuple(int(x) for x in lines[0].split()[2:4])
    data = np.loadtxt(lines[2:], ndmin=2) if len(lines) > 2 else np.zeros((0, 4))
    vals = data[:, 2] + 1j * data[:, 3]
    if not np.any(vals.imag):
        vals = vals.real
    return sp.csr_matrix((vals, (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)
