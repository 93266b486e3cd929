"""Structural analysis: observability decomposition and partial-detectability tests.

Partial detectability of (A, C) with respect to a functional matrix K is
decided by two independent routes that must agree:

* the rank route, testing rank [D_lambda; K] == rank D_lambda on the
  unstable eigenvalues of A (for any other lambda the stack already has
  full column rank, so the condition holds automatically);
* the structural route, checking that the functional does not touch the
  unstable unobservable block of the observability decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matnum
from .errors import InternalInconsistencyError, NumericFailure, PreconditionError
from .matnum import STAB_TOL_DEFAULT
from .sysmodel import PlantModel, stacked_output

#: Relative tolerance on ||K_obar3||_F for the structural route.
STRUCT_TOL_DEFAULT = 1e-8

#: Unstable eigenvalues closer than this (absolute, complex plane) are
#: tested once.
DEDUP_TOL = 1e-8


def _stack_rank_tol(n, shape):
    """Default rank tolerance for observability / detectability stacks.

    These matrices are built from up to n sequential matrix products, so
    their rounding noise exceeds the single-matrix eps-level convention;
    the factor scales the cutoff with the product depth.
    """
    return 8.0 * (n + 1) * max(shape) * matnum.EPS


@dataclass(frozen=True)
class Decomposition:
    """Observability decomposition of (A, C) with stable/unstable split.

    P is orthogonal with PᵀAP block lower triangular: observable block
    A_o1 (n1), stable unobservable A_obar2 (n2), unstable unobservable
    A_obar3 (n3).  CP = [C_o1 0 0]; KP = [K_o1 K_obar2 K_obar3].  B
    blocks are present when a B matrix was supplied.
    """

    P: np.ndarray
    n1: int
    n2: int
    n3: int
    A_o1: np.ndarray
    A_21: np.ndarray
    A_31: np.ndarray
    A_32: np.ndarray
    A_obar2: np.ndarray
    A_obar3: np.ndarray
    C_o1: np.ndarray
    K_o1: np.ndarray
    K_obar2: np.ndarray
    K_obar3: np.ndarray
    B_o1: np.ndarray | None = None
    B_obar2: np.ndarray | None = None
    B_obar3: np.ndarray | None = None

    @property
    def n(self):
        return self.n1 + self.n2 + self.n3

    @property
    def q(self):
        """Dimension of the estimator coordinates (observable + stable)."""
        return self.n1 + self.n2


@dataclass(frozen=True)
class Witness:
    """Rank pair at one tested eigenvalue."""

    lam: complex
    rank_with_k: int
    rank_without_k: int

    @property
    def equal(self):
        return self.rank_with_k == self.rank_without_k


@dataclass(frozen=True)
class DetectabilityVerdict:
    detectable: bool
    witnesses: tuple[Witness, ...] = ()
    k_obar3_norm: float | None = None
    note: str = ""

    @property
    def failing(self):
        return tuple(w for w in self.witnesses if not w.equal)


def observability_matrix(A, C):
    """Stack [C; CA; ...; CA^(n-1)]."""
    n = A.shape[0]
    rows = [C]
    M = C
    for _ in range(n - 1):
        M = M @ A
        rows.append(M)
    return np.vstack(rows) if rows else np.zeros((0, n))


def decompose(A, C, K, B=None, stab_tol=STAB_TOL_DEFAULT, rank_tol=None):
    """Observability decomposition with the unobservable part Schur-split.

    Construction: SVD of the observability matrix provides an orthogonal
    P1 whose trailing columns span the unobservable subspace; the
    unobservable block is then reordered by a real Schur decomposition so
    its stable part leads.  Observability of the resulting (A_o1, C_o1)
    is re-verified rather than trusted.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    K = np.asarray(K, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise PreconditionError(f"A must be square, got {A.shape}")
    if C.shape[1] != n or K.shape[1] != n:
        raise PreconditionError("C and K must have as many columns as A")
    if B is not None:
        B = np.asarray(B, dtype=float)
        if B.shape[0] != n:
            raise PreconditionError(f"B has {B.shape[0]} rows, expected {n}")

    obs = observability_matrix(A, C)
    obs_tol = rank_tol if rank_tol is not None else _stack_rank_tol(n, obs.shape)
    n1 = matnum.rank_tol(obs, obs_tol)
    if n1 == n:
        P = np.eye(n) if obs.size == 0 else matnum.svd(obs)[2]
    else:
        _, _, V = matnum.svd(obs)
        P = V
    # split the unobservable block, stable modes leading
    A1 = P.T @ A @ P
    if n - n1 > 0:
        schur = matnum.ordered_real_schur(A1[n1:, n1:], stab_tol=stab_tol)
        n2 = schur.split
        P = P @ np.block(
            [
                [np.eye(n1), np.zeros((n1, n - n1))],
                [np.zeros((n - n1, n1)), schur.Q],
            ]
        )
    else:
        n2 = 0
    n3 = n - n1 - n2

    Ar = P.T @ A @ P
    Cr = C @ P
    Kr = K @ P
    i1, i2 = n1, n1 + n2
    dec = Decomposition(
        P=P,
        n1=n1,
        n2=n2,
        n3=n3,
        A_o1=Ar[:i1, :i1],
        A_21=Ar[i1:i2, :i1],
        A_31=Ar[i2:, :i1],
        A_32=Ar[i2:, i1:i2],
        A_obar2=Ar[i1:i2, i1:i2],
        A_obar3=Ar[i2:, i2:],
        C_o1=Cr[:, :i1],
        K_o1=Kr[:, :i1],
        K_obar2=Kr[:, i1:i2],
        K_obar3=Kr[:, i2:],
        B_o1=None if B is None else (P.T @ B)[:i1],
        B_obar2=None if B is None else (P.T @ B)[i1:i2],
        B_obar3=None if B is None else (P.T @ B)[i2:],
    )
    _verify_decomposition(dec, A, C, rank_tol)
    return dec


def _verify_decomposition(dec, A, C, rank_tol):
    n = dec.n
    scale_a = max(np.linalg.norm(A, "fro"), 1.0)
    if np.linalg.norm(dec.P.T @ dec.P - np.eye(n), "fro") > 1e-9 * max(n, 1):
        raise NumericFailure("decomposition basis lost orthogonality")
    Ar = dec.P.T @ A @ dec.P
    upper = np.triu(Ar, 1).copy()
    # the observable block may be full; only the block pattern must vanish
    upper[: dec.n1, : dec.n1] = 0.0
    upper[dec.n1 : dec.n1 + dec.n2, dec.n1 : dec.n1 + dec.n2] = 0.0
    upper[dec.n1 + dec.n2 :, dec.n1 + dec.n2 :] = 0.0
    if np.linalg.norm(upper, "fro") > 1e-8 * scale_a:
        raise NumericFailure("decomposition did not produce the block lower-triangular pattern")
    Cr = C @ dec.P
    if Cr[:, dec.n1 :].size and np.abs(Cr[:, dec.n1 :]).max() > 1e-8 * max(
        np.linalg.norm(C, "fro"), 1.0
    ):
        raise NumericFailure("C does not vanish on the unobservable subspace")
    sub_obs = observability_matrix(dec.A_o1, dec.C_o1)
    sub_tol = rank_tol if rank_tol is not None else _stack_rank_tol(dec.n1, sub_obs.shape)
    got = matnum.rank_tol(sub_obs, sub_tol)
    if got != dec.n1:
        raise NumericFailure(
            f"(A_o1, C_o1) observability check failed: rank {got} != n1 {dec.n1}; "
            "consider tightening rank_tol"
        )


def d_lambda(A, C, lam):
    """Detectability stack [C; C(lI-A); ...; C(lI-A)^(n-1); (lI-A)^n].

    Complex lam yields a complex matrix; ranks are taken over the complex
    field downstream.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or C.shape[1] != n:
        raise PreconditionError("A must be square and C must have matching columns")
    LA = lam * np.eye(n) - A
    rows = [C.astype(LA.dtype)]
    power = np.eye(n, dtype=LA.dtype)
    for _ in range(n - 1):
        power = power @ LA
        rows.append(C @ power)
    rows.append(power @ LA if n > 0 else np.eye(0))
    return np.vstack(rows)


def _unstable_representatives(values, stab_tol):
    """Distinct unstable eigenvalues, conjugate pairs folded to Im >= 0."""
    reps: list[complex] = []
    for lam in values:
        if lam.real < -stab_tol:
            continue
        lam = complex(lam.real, abs(lam.imag))
        if all(abs(lam - r) > DEDUP_TOL for r in reps):
            reps.append(lam)
    return sorted(reps, key=lambda z: (z.real, z.imag))


def is_partially_detectable_rank(A, C, K, stab_tol=STAB_TOL_DEFAULT, rank_tol=None):
    """Rank route: test the stack condition at each unstable eigenvalue.

    Only lambda in sigma(A) with Re >= -stab_tol are tested: elsewhere
    (lI - A)^n is invertible, the stack has full column rank and adding K
    cannot raise it.  Conjugate pairs are tested once (conjugate stacks
    have equal rank).
    """
    spec = matnum.eigenvalues(np.asarray(A, dtype=float), stab_tol=stab_tol)
    witnesses = []
    n = np.asarray(A).shape[0]
    for lam in _unstable_representatives(spec.values, stab_tol):
        D = d_lambda(A, C, lam)
        tol = rank_tol if rank_tol is not None else _stack_rank_tol(n, D.shape)
        r0 = matnum.rank_tol(D, tol)
        r1 = matnum.rank_tol(np.vstack([D, np.asarray(K, dtype=complex)]), tol)
        witnesses.append(Witness(lam=lam, rank_with_k=r1, rank_without_k=r0))
    return DetectabilityVerdict(
        detectable=all(w.equal for w in witnesses),
        witnesses=tuple(witnesses),
        note=(
            "rank condition evaluated on the unstable spectrum only; for all other "
            "lambda the stack has full column rank and the condition holds automatically"
        ),
    )


def is_partially_detectable_structural(dec: Decomposition, struct_tol=STRUCT_TOL_DEFAULT):
    """Structural route: the functional must not touch the unstable unobservable block."""
    k_norm = float(np.linalg.norm(dec.K_obar3, "fro"))
    k_scale = max(
        float(np.linalg.norm(np.hstack([dec.K_o1, dec.K_obar2, dec.K_obar3]), "fro")), 1.0
    )
    return DetectabilityVerdict(
        detectable=k_norm <= struct_tol * k_scale,
        k_obar3_norm=k_norm,
        note="structural route: ||K_obar3||_F against the functional's scale",
    )


def is_jointly_partially_detectable(
    plant: PlantModel,
    stab_tol=STAB_TOL_DEFAULT,
    rank_tol=None,
    struct_tol=STRUCT_TOL_DEFAULT,
):
    """Joint partial detectability of the plant through all sensors stacked.

    Runs both the rank route and the structural route on (A, C~, K); the
    verdicts must agree, otherwise the tolerances are misconfigured and
    an InternalInconsistencyError is raised.
    """
    Ct, _ = stacked_output(plant)
    by_rank = is_partially_detectable_rank(
        plant.A, Ct, plant.K, stab_tol=stab_tol, rank_tol=rank_tol
    )
    dec = decompose(plant.A, Ct, plant.K, stab_tol=stab_tol, rank_tol=rank_tol)
    by_struct = is_partially_detectable_structural(dec, struct_tol=struct_tol)
    if by_rank.detectable != by_struct.detectable:
        raise InternalInconsistencyError(
            "detectability routes disagree "
            f"(rank route: {by_rank.detectable}, structural route: {by_struct.detectable}, "
            f"||K_obar3|| = {by_struct.k_obar3_norm:.3e}); check stab_tol/rank_tol settings"
        )
    return DetectabilityVerdict(
        detectable=by_rank.detectable,
        witnesses=by_rank.witnesses,
        k_obar3_norm=by_struct.k_obar3_norm,
        note="joint verdict: rank route and structural route agree",
    )
