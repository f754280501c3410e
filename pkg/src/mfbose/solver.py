"""Eigensolvers and matrix-function kernels for Hermitian sparse operators.

Lanczos with full reorthogonalization is used for extremal eigenpairs, a Krylov
projection for ``exp(tA) psi``, and either a dense eigendecomposition or a
Chebyshev kernel-polynomial expansion for spectral measures.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import BreakdownWithoutConvergence, DimensionOverflow, NoConvergence, ValidationError

DENSE_LIMIT = 4000
EIG_TOL = 1e-10
EXPM_TOL = 1e-10
KPM_MOMENTS = 1024


def _as_operator(A):
    return A if sp.issparse(A) else np.asarray(A)


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate ``v`` so its first non-negligible entry is real and positive."""
    mag = np.abs(v)
    if not mag.any():
        return v
    first = int(np.argmax(mag > 1e-10 * mag.max()))
    return v * (np.conj(v[first]) / mag[first])


@dataclass(frozen=True)
class GroundStateResult:
    energy: float
    vector: np.ndarray
    gap: float
    residual: float
    degenerate: bool = False


@dataclass(frozen=True)
class Eigenpair:
    value: float
    vector: np.ndarray
    residual: float


def full_spectrum_dense(A, *, dense_limit: int = DENSE_LIMIT):
    """All eigenpairs ``(values, vectors)`` of a Hermitian matrix, values ascending."""
    n = A.shape[0]
    if n > dense_limit:
        raise DimensionOverflow(f"dimension {n} exceeds the dense limit {dense_limit}")
    M = _dense(A)
    w, V = np.linalg.eigh(M)
    return w, V


def _lanczos_lowest(A, v0, project, tol, max_iter, restart):
    """Lowest eigenpair of ``P A P`` on the complement of ``project``'s span."""
    n = A.shape[0]
    dtype = np.result_type(A.dtype, v0.dtype, float)
    v = project(v0.astype(dtype))
    best = (np.inf, None, np.inf)
    iters = 0
    while iters < max_iter:
        nrm = np.linalg.norm(v)
        if nrm == 0:
            raise NoConvergence("Lanczos start vector vanished after projection", best_residual=best[2])
        m_cap = min(restart, n)
        V = np.zeros((n, m_cap + 1), dtype=dtype)
        alpha = np.zeros(m_cap)
        beta = np.zeros(m_cap)
        V[:, 0] = v / nrm
        m = 0
        for j in range(m_cap):
            w = project(A @ V[:, j])
            alpha[j] = np.vdot(V[:, j], w).real
            w = w - V[:, : j + 1] @ (V[:, : j + 1].conj().T @ w)
            w = w - V[:, : j + 1] @ (V[:, : j + 1].conj().T @ w)
            beta[j] = np.linalg.norm(w)
            m = j + 1
            iters += 1
            if beta[j] <= 1e-14 * max(1.0, abs(alpha[j])):
                break
            V[:, j + 1] = w / beta[j]
            if m >= 8 and (m % 8 == 0):
                theta, s = sla.eigh_tridiagonal(alpha[:m], beta[: m - 1], select="i", select_range=(0, 0))
                if abs(beta[j] * s[-1, 0]) < 0.1 * tol:
                    break
            if iters >= max_iter:
                break
        theta, S = sla.eigh_tridiagonal(alpha[:m], beta[: m - 1]) if m > 1 else (alpha[:1], np.ones((1, 1)))
        x = V[:, :m] @ S[:, 0]
        x = project(x)
        x /= np.linalg.norm(x)
        Ax = project(A @ x)
        e = np.vdot(x, Ax).real
        res = np.linalg.norm(Ax - e * x)
        if res < best[2]:
            best = (e, x, res)
        if res <= tol:
            return e, x, res
        v = x
    raise NoConvergence(
        f"Lanczos did not reach residual {tol:.1e} in {max_iter} iterations (best {best[2]:.3e})",
        best_residual=best[2],
    )


def low_spectrum(A, k: int, *, tol: float = EIG_TOL, dense_limit: int = DENSE_LIMIT, max_iter: int = 5000,
                 restart: int = 200, seed: int = 0) -> list[Eigenpair]:
    """The ``k`` lowest eigenpairs, ascending, with orthonormal vectors.

    Dimensions up to ``dense_limit`` use a dense eigendecomposition.  Larger
    ones run Lanczos with full reorthogonalization repeatedly, each run
    deflating the vectors already found, so degenerate eigenvalues appear with
    their multiplicity.
    """
    A = _as_operator(A)
    n = A.shape[0]
    k = min(k, n)
    if k < 1:
        raise ValidationError("k must be >= 1")
    if n <= dense_limit:
        w, V = full_spectrum_dense(A, dense_limit=dense_limit)
        out = []
        for i in range(k):
            v = _fix_phase(V[:, i])
            out.append(Eigenpair(float(w[i]), v, float(np.linalg.norm(A @ v - w[i] * v))))
        return out
    rng = np.random.default_rng(seed)
    found: list[np.ndarray] = []

    def project(x):
        for f in found:
            x = x - f * np.vdot(f, x)
        return x

    out = []
    for _ in range(k):
        v0 = rng.standard_normal(n)
        e, x, res = _lanczos_lowest(A, v0, project, tol, max_iter, restart)
        x = _fix_phase(x)
        found.append(x)
        out.append(Eigenpair(float(e), x, float(np.linalg.norm(A @ x - e * x))))
    out.sort(key=lambda p: p.value)
    return out


def ground_state(A, *, tol: float = EIG_TOL, dense_limit: int = DENSE_LIMIT, degeneracy_tol: float | None = None,
                 **kwargs) -> GroundStateResult:
    """Ground energy, unit vector, gap and residual of a Hermitian operator."""
    n = A.shape[0]
    pairs = low_spectrum(A, min(2, n), tol=tol, dense_limit=dense_limit, **kwargs)
    e0 = pairs[0]
    gap = pairs[1].value - e0.value if len(pairs) > 1 else np.inf
    gap = max(gap, 0.0)
    scale = max(1.0, abs(e0.value))
    deg_tol = degeneracy_tol if degeneracy_tol is not None else max(1e3 * tol, 1e-9) * scale
    return GroundStateResult(e0.value, e0.vector, float(gap), e0.residual, degenerate=bool(gap <= deg_tol))


def _is_diagonal(A) -> bool:
    if sp.issparse(A):
        coo = A.tocoo()
        return bool(np.all(coo.row == coo.col))
    M = np.asarray(A)
    return bool(np.count_nonzero(M - np.diag(np.diagonal(M))) == 0)


def expm_multiply(A, psi, t: float, *, tol: float = EXPM_TOL, m_max: int = 60) -> np.ndarray:
    """``exp(t A) psi`` for Hermitian ``A`` and real ``t``.

    Krylov projection onto Lanczos subspaces of adaptive size, with the time
    interval split into substeps whenever the a-posteriori estimate
    ``beta * h_{m+1,m} * |[exp(tau T_m)]_{m,1}|`` exceeds ``tol`` relative to
    the current vector norm.
    """
    A = _as_operator(A)
    psi = np.asarray(psi)
    if t == 0 or not np.any(psi):
        return psi.copy()
    if _is_diagonal(A):
        d = A.diagonal() if sp.issparse(A) else np.diagonal(A)
        return np.exp(t * d) * psi
    n = A.shape[0]
    dtype = np.result_type(A.dtype, psi.dtype, float)
    w = psi.astype(dtype)
    t_done = 0.0
    tau = t
    m_max = min(m_max, n)
    while abs(t_done) < abs(t):
        tau = np.sign(t) * min(abs(tau), abs(t) - abs(t_done))
        beta = np.linalg.norm(w)
        V = np.zeros((n, m_max + 1), dtype=dtype)
        alpha = np.zeros(m_max)
        betas = np.zeros(m_max)
        V[:, 0] = w / beta
        accepted = None
        for j in range(m_max):
            u = A @ V[:, j]
            alpha[j] = np.vdot(V[:, j], u).real
            u = u - V[:, : j + 1] @ (V[:, : j + 1].conj().T @ u)
            u = u - V[:, : j + 1] @ (V[:, : j + 1].conj().T @ u)
            betas[j] = np.linalg.norm(u)
            m = j + 1
            T = np.diag(alpha[:m]) + np.diag(betas[: m - 1], 1) + np.diag(betas[: m - 1], -1)
            eT = sla.expm(tau * T)[:, 0]
            happy = betas[j] <= 1e-13 * max(1.0, np.abs(alpha[:m]).max())
            err = 0.0 if happy else betas[j] * abs(eT[-1])
            if err <= tol * np.linalg.norm(eT):
                accepted = beta * (V[:, :m] @ eT)
                break
            if happy:
                break
            V[:, j + 1] = u / betas[j]
        if accepted is None:
            tau = tau / 2
            if abs(tau) < 1e-12 * abs(t):
                raise BreakdownWithoutConvergence(
                    f"Krylov exponential did not reach tolerance {tol:.1e} even with step {abs(tau):.2e}"
                )
            continue
        w = accepted
        t_done += tau
    return w


def expm_conjugate(X, B, *, tol: float = EXPM_TOL) -> np.ndarray:
    """Dense ``exp(X) B exp(-X)`` with both exponentials built column by column."""
    n = X.shape[0]
    eye = np.eye(n)
    E = np.column_stack([expm_multiply(X, eye[:, i], 1.0, tol=tol) for i in range(n)])
    Einv = np.column_stack([expm_multiply(X, eye[:, i], -1.0, tol=tol) for i in range(n)])
    return E @ _dense(B) @ Einv


@dataclass(frozen=True)
class SpectralMeasure:
    """Point measure ``sum_i w_i delta(lambda_i)``, points ascending."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def cdf(self, x) -> np.ndarray:
        """``P[X <= x]``."""
        c = np.concatenate([[0.0], np.cumsum(self.weights)])
        return c[np.searchsorted(self.points, np.asarray(x, dtype=float), side="right")]

    def tail(self, x, *, strict: bool = True, atol: float = 0.0) -> np.ndarray:
        """``P[X > x]`` (``strict``) or ``P[X >= x]``; ``atol`` widens atom comparisons."""
        x = np.asarray(x, dtype=float)
        c = np.concatenate([np.cumsum(self.weights[::-1])[::-1], [0.0]])
        if strict:
            idx = np.searchsorted(self.points, x + atol, side="right")
        else:
            idx = np.searchsorted(self.points, x - atol, side="left")
        return c[idx]

    def moment(self, k: int) -> float:
        return float(np.sum(self.weights * self.points ** k))


def spectral_measure_dense(A, psi, *, dense_limit: int = DENSE_LIMIT) -> SpectralMeasure:
    w, V = full_spectrum_dense(A, dense_limit=dense_limit)
    amp = V.conj().T @ np.asarray(psi)
    weights = np.abs(amp) ** 2
    weights = weights / weights.sum()
    return SpectralMeasure(w, weights)


@dataclass(frozen=True)
class KpmMeasure:
    """Jackson-damped Chebyshev expansion of a spectral measure.

    The operator is mapped to ``[-1, 1]`` by ``(A - center) / half_width``.
    """

    moments: np.ndarray
    center: float
    half_width: float

    @property
    def kernel(self) -> np.ndarray:
        M = len(self.moments)
        n = np.arange(M)
        q = np.pi / (M + 1)
        return ((M - n + 1) * np.cos(q * n) + np.sin(q * n) / np.tan(q)) / (M + 1)

    def cdf(self, x) -> np.ndarray:
        y = np.clip((np.asarray(x, dtype=float) - self.center) / self.half_width, -1.0, 1.0)
        theta = np.arccos(y)
        g = self.kernel * self.moments
        n = np.arange(1, len(g))
        series = np.sin(np.multiply.outer(theta, n)) @ (g[1:] / n)
        val = g[0] * (np.pi - theta) / np.pi - 2.0 * series / np.pi
        return np.clip(val, 0.0, 1.0)

    def tail(self, x, **_ignored) -> np.ndarray:
        return 1.0 - self.cdf(x)


def spectral_measure_kpm(A, psi, *, moments: int = KPM_MOMENTS, bounds=None) -> KpmMeasure:
    """Chebyshev moments ``<psi, T_n(A_scaled) psi>`` for a unit vector ``psi``."""
    A = _as_operator(A)
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    if bounds is None:
        if sp.issparse(A):
            r = float(abs(A).sum(axis=1).max()) if A.nnz else 0.0
        else:
            r = float(np.abs(A).sum(axis=1).max())
        bounds = (-r, r)
    lo, hi = bounds
    center = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo) * 1.01 or 1.0
    mu = np.zeros(moments)
    t0 = psi
    t1 = (A @ psi - center * psi) / half
    mu[0] = 1.0
    if moments > 1:
        mu[1] = np.vdot(psi, t1).real
    for k in range(2, moments):
        t2 = 2.0 * (A @ t1 - center * t1) / half - t0
        mu[k] = np.vdot(psi, t2).real
        t0, t1 = t1, t2
    return KpmMeasure(mu, center, half)


def spectral_measure(A, psi, *, method: str = "auto", dense_limit: int = DENSE_LIMIT, moments: int = KPM_MOMENTS):
    """Spectral measure of ``A`` in the state ``psi``: dense when possible, else KPM."""
    if method == "dense" or (method == "auto" and A.shape[0] <= dense_limit):
        return spectral_measure_dense(A, psi, dense_limit=dense_limit)
    if method in ("kpm", "auto"):
        return spectral_measure_kpm(A, psi, moments=moments)
    raise ValidationError(f"unknown spectral method {method!r}")


def restrict(A, indices) -> sp.csr_matrix:
    """Principal submatrix on ``indices`` (e.g. a momentum sector)."""
    idx = np.asarray(indices)
    return sp.csr_matrix(A)[idx][:, idx]


def spectrum_to_csv(values, path) -> None:
    np.savetxt(path, np.asarray(values)[:, None], fmt="%.17g", header="eigenvalue", comments="")
