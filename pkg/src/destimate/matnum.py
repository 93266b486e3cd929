"""Dense real-matrix kernels used by the estimator pipeline.

Everything here operates on plain ``numpy.ndarray`` values and is pure:
no global state, deterministic results, safe to call from multiple
threads.  Sizes are desk-scale (n below ~100 by contract), so the
implementations favour simplicity and verifiability over asymptotics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NumericFailure, PreconditionError, SynthesisFailure

EPS = float(np.finfo(float).eps)

#: Stability boundary: Re(lambda) < -STAB_TOL_DEFAULT counts as stable, so
#: eigenvalues on (or numerically at) the imaginary axis are treated as
#: unstable.  Conservative for detectability decisions.
STAB_TOL_DEFAULT = 1e-9


def _as_matrix(M, name="matrix", square=False, allow_complex=False):
    M = np.asarray(M, dtype=complex if allow_complex else float)
    if M.ndim != 2:
        raise PreconditionError(f"{name} must be 2-D, got ndim={M.ndim}")
    if not np.all(np.isfinite(M)):
        raise PreconditionError(f"{name} contains non-finite entries")
    if square and M.shape[0] != M.shape[1]:
        raise PreconditionError(f"{name} must be square, got shape {M.shape}")
    return M


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues with a stable/unstable classification.

    ``stable`` collects eigenvalues with Re < -stab_tol; everything else
    (closed right half plane, up to the tolerance) is ``unstable``.
    """

    values: np.ndarray
    stab_tol: float = STAB_TOL_DEFAULT

    @property
    def stable(self):
        return self.values[self.values.real < -self.stab_tol]

    @property
    def unstable(self):
        return self.values[self.values.real >= -self.stab_tol]

    @property
    def abscissa(self):
        return float(self.values.real.max()) if self.values.size else -np.inf


@dataclass(frozen=True)
class OrderedSchur:
    """Real Schur form QᵀMQ = Tlow, block lower quasi-triangular.

    The leading ``split`` x ``split`` diagonal block carries every
    eigenvalue with Re < -stab_tol; the trailing block carries the rest.
    Diagonal blocks are 1x1 or 2x2 (complex-conjugate pairs never split).
    """

    Q: np.ndarray
    Tlow: np.ndarray
    split: int
    stab_tol: float = field(default=STAB_TOL_DEFAULT)


def svd(M):
    """Singular value decomposition M = U @ diag(s) @ V.T.

    Returns (U, s, V) with orthogonal U, V and s non-increasing.  Note the
    third factor is V itself, not its transpose.
    """
    M = _as_matrix(M, "M")
    try:
        U, s, Vt = np.linalg.svd(M)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"SVD did not converge: {exc}") from exc
    return U, s, Vt.T


def rank_tol(M, tol=None):
    """Numerical rank: singular values above ``tol * max(sigma_max, 1)``.

    ``tol`` is relative; the ``max(sigma_max, 1)`` guard keeps the cutoff
    meaningful for near-zero matrices.  Defaults to
    ``max(rows, cols) * machine_eps``.  Complex input is accepted: the
    rank is computed from the complex SVD directly (no real embedding).
    """
    M = np.asarray(M)
    M = _as_matrix(M, "M", allow_complex=np.iscomplexobj(M))
    if M.size == 0:
        return 0
    if tol is None:
        tol = max(M.shape) * EPS
    if tol < 0:
        raise PreconditionError("rank tolerance must be non-negative")
    try:
        s = np.linalg.svd(M, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"SVD did not converge: {exc}") from exc
    cutoff = tol * max(float(s[0]) if s.size else 0.0, 1.0)
    return int((s > cutoff).sum())


def eigenvalues(M, stab_tol=STAB_TOL_DEFAULT):
    """Eigenvalues of a square matrix, with stability classification."""
    M = _as_matrix(M, "M", square=True)
    try:
        vals = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"eigenvalue iteration did not converge: {exc}") from exc
    return Spectrum(values=vals, stab_tol=float(stab_tol))


def spectral_abscissa(M):
    """max Re(lambda) over the spectrum of M."""
    return eigenvalues(M).abscissa


def ordered_real_schur(M, stab_tol=STAB_TOL_DEFAULT):
    """Ordered real Schur form with the stable invariant subspace leading.

    Computed as the upper quasi-triangular Schur form of Mᵀ (stable
    eigenvalues sorted to the top-left) and transposed, which yields the
    block *lower* quasi-triangular factor directly.
    """
    M = _as_matrix(M, "M", square=True)
    n = M.shape[0]
    if n == 0:
        return OrderedSchur(Q=np.eye(0), Tlow=np.zeros((0, 0)), split=0, stab_tol=stab_tol)
    try:
        Tup, Q, sdim = sla.schur(
            M.T, output="real", sort=lambda re, im: re < -stab_tol
        )
    except Exception as exc:  # scipy raises LinAlgError or SqrtmError-like
        raise NumericFailure(f"Schur iteration failed: {exc}") from exc
    Tlow = Tup.T
    schur = OrderedSchur(Q=Q, Tlow=Tlow, split=int(sdim), stab_tol=float(stab_tol))
    # LAPACK keeps 2x2 blocks intact; re-check the split classification.
    lead = Tlow[: schur.split, : schur.split]
    trail = Tlow[schur.split :, schur.split :]
    if lead.size and np.linalg.eigvals(lead).real.max() >= -stab_tol:
        raise NumericFailure("Schur reordering left an unstable eigenvalue in the leading block")
    if trail.size and np.linalg.eigvals(trail).real.min() < -stab_tol:
        raise NumericFailure("Schur reordering left a stable eigenvalue in the trailing block")
    return schur


def _lyapunov_kron(F, Q):
    """Solve Fᵀ P + P F = -Q by dense Kronecker vectorization.

    No definiteness requirements on Q; the linear system is nonsingular
    whenever no two eigenvalues of F sum to zero.
    """
    n = F.shape[0]
    A_kr = np.kron(np.eye(n), F.T) + np.kron(F.T, np.eye(n))
    try:
        vec = np.linalg.solve(A_kr, -Q.flatten(order="F"))
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"singular Kronecker system in Lyapunov solve: {exc}") from exc
    P = vec.reshape((n, n), order="F")
    return 0.5 * (P + P.T)


def solve_lyapunov(Nbar, Q):
    """Solve Nbarᵀ P + P Nbar = -Q for symmetric positive definite P.

    Parameters
    ----------
    Nbar : (n, n) array
        Must be Hurwitz-stable (spectral abscissa < 0).
    Q : (n, n) array
        Symmetric positive definite right-hand side.

    Returns
    -------
    P : (n, n) ndarray, symmetric positive definite.

    Raises
    ------
    PreconditionError
        If Nbar is not stable or Q is not symmetric.
    NumericFailure
        If the Kronecker system is singular or the computed P fails its
        residual / definiteness checks.
    """
    Nbar = _as_matrix(Nbar, "Nbar", square=True)
    Q = _as_matrix(Q, "Q", square=True)
    if Nbar.shape != Q.shape:
        raise PreconditionError(f"shape mismatch: Nbar {Nbar.shape} vs Q {Q.shape}")
    if Nbar.shape[0] == 0:
        return np.zeros((0, 0))
    if spectral_abscissa(Nbar) >= 0:
        raise PreconditionError("Nbar must be stable (spectral abscissa < 0)")
    qscale = np.linalg.norm(Q, "fro")
    if np.linalg.norm(Q - Q.T, "fro") > 1e-12 * max(qscale, 1.0):
        raise PreconditionError("Q must be symmetric")
    P = _lyapunov_kron(Nbar, Q)
    residual = np.linalg.norm(Nbar.T @ P + P @ Nbar + Q, "fro")
    if residual > 1e-8 * max(qscale, 1.0):
        raise NumericFailure(f"Lyapunov residual too large: {residual:.3e}")
    if not is_positive_definite(P, tol=0.0):
        raise NumericFailure("Lyapunov solution is not positive definite")
    return P


def is_positive_definite(M, tol=0.0):
    """Cholesky-based definiteness test: all pivots must exceed ``tol``."""
    M = _as_matrix(M, "M", square=True)
    n = M.shape[0]
    scale = np.abs(M).max() if n else 0.0
    if np.linalg.norm(M - M.T, "fro") > max(tol, n * EPS * max(scale, 1.0)):
        raise PreconditionError("M must be symmetric")
    L = np.zeros_like(M)
    for j in range(n):
        pivot = M[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > tol:
            return False
        L[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            L[j + 1 :, j] = (M[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return True


def _bass_gain(A, B, beta):
    """Bass stabilizing state feedback: K with A - B K stable.

    Solves (A + beta I) Z + Z (A + beta I)ᵀ = 2 B Bᵀ and returns
    K = Bᵀ Z⁺.  The pseudoinverse (eigenvalue cutoff) keeps the
    construction valid for stabilizable pairs, where Z is singular on the
    uncontrollable (necessarily stable) subspace: those modes are left
    untouched.  Controllable modes land at Re = -beta exactly.
    """
    n = A.shape[0]
    G = -(A + beta * np.eye(n)).T
    Z = _lyapunov_kron(G, 2.0 * B @ B.T)
    d, V = np.linalg.eigh(Z)
    cutoff = n * EPS * max(float(d.max(initial=0.0)), 0.0)
    inv_d = np.where(d > cutoff, 1.0, 0.0) / np.where(d > cutoff, d, 1.0)
    return (B.T @ V) * inv_d @ V.T


def stabilizing_output_injection(A, C, beta=None):
    """Gain L such that A - L C is Hurwitz, for a detectable pair (A, C).

    Uses the dual Bass construction: a Bass feedback is computed for
    (Aᵀ, Cᵀ) through the Lyapunov kernel and transposed.  The returned
    gain is always verified by an explicit eigenvalue check; on failure
    the shift is doubled, with up to 3 retries.

    Parameters
    ----------
    A : (n, n) array
    C : (p, n) array
        p = 0 is accepted; then L is n x 0 and A itself must be stable.
    beta : float, optional
        Shift controlling where the observable modes land (Re = -beta).
        Must exceed -min Re(sigma(A)) so the shifted Lyapunov equation is
        solvable.  Default: 1 + max(0, -min Re(sigma(A))), the tightest
        such bound with unit margin; unobservable (stable) modes are
        never moved, only the observable ones are pushed to -beta.
    """
    A = _as_matrix(A, "A", square=True)
    C = _as_matrix(C, "C")
    n = A.shape[0]
    if C.shape[1] != n:
        raise PreconditionError(f"C has {C.shape[1]} columns, expected {n}")
    eigs = np.linalg.eigvals(A) if n else np.zeros(0, dtype=complex)
    if C.shape[0] == 0:
        if n and eigs.real.max() >= 0:
            raise SynthesisFailure("no outputs and A is not stable: nothing to inject")
        return np.zeros((n, 0))
    if n == 0:
        return np.zeros((0, C.shape[0]))
    if beta is None:
        beta = 1.0 + max(0.0, -float(eigs.real.min()))
    elif beta <= max(0.0, -float(eigs.real.min())):
        raise PreconditionError(
            "beta must exceed max(0, -min Re(sigma(A))) for the Bass construction"
        )
    last = None
    for _ in range(4):  # initial attempt + 3 retries
        L = _bass_gain(A.T, C.T, beta).T
        abscissa = float(np.linalg.eigvals(A - L @ C).real.max())
        if abscissa < 0.0:
            return L
        last = abscissa
        beta *= 2.0
    raise SynthesisFailure(
        f"output injection failed verification after retries (abscissa {last:.3e}); "
        "is (A, C) detectable?"
    )
