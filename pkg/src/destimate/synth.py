"""Estimator synthesis: centralized and network-coupled partial-state estimators.

The distributed construction follows the standard pipeline: observability
decomposition -> reduced coordinates T -> stabilizing output injection for
the stacked sensors -> Lyapunov certificate -> per-node gains scaled by the
node count -> coupling gain chosen above the certificate bound -> final
independent eigenvalue verification of the coupled error dynamics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import matnum, structan
from .errors import (
    DetectabilityError,
    DimensionError,
    InternalInconsistencyError,
    NumericFailure,
    PreconditionError,
    ScenarioError,
    SynthesisFailure,
    TopologyError,
)
from .matnum import STAB_TOL_DEFAULT
from .sysmodel import CommGraph, PlantModel, Sensor, analyze_topology, laplacian, stacked_output

IDENTITY_RTOL = 1e-8


@dataclass(frozen=True)
class CentralizedEstimator:
    """Single estimator w' = Nw + Hu + Ly, z_hat = Rw with w ~ Tx."""

    T: np.ndarray
    N: np.ndarray
    H: np.ndarray
    L: np.ndarray
    R: np.ndarray

    @property
    def q(self):
        return self.T.shape[0]


@dataclass(frozen=True)
class NodeEstimator:
    N: np.ndarray
    H: np.ndarray
    L: np.ndarray
    M: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class DistributedEstimator:
    """Per-node estimators sharing the reduced coordinates T and gain gamma."""

    T: np.ndarray
    nodes: tuple[NodeEstimator, ...]
    gamma: float

    @property
    def q(self):
        return self.T.shape[0]

    @property
    def l(self):
        return len(self.nodes)


@dataclass(frozen=True)
class SynthesisReport:
    Lbar: np.ndarray
    Pbar: np.ndarray
    Nbar: np.ndarray
    Lambda1: float
    Lambda2: float | None
    Lambda3: float
    lambda2: float | None
    gamma_bound: float | None
    gamma_used: float
    n1: int
    n2: int
    n3: int

    @property
    def q(self):
        return self.n1 + self.n2

    def scalars(self):
        return {
            "Lambda1": self.Lambda1,
            "Lambda2": self.Lambda2,
            "Lambda3": self.Lambda3,
            "lambda2": self.lambda2,
            "gamma_bound": self.gamma_bound,
            "gamma_used": self.gamma_used,
            "n1": self.n1,
            "n2": self.n2,
            "n3": self.n3,
        }


def _identity_scale(*mats):
    return max([1.0] + [float(np.linalg.norm(M, "fro")) for M in mats if M.size])


def _check_identity(name, residual, scale):
    if residual > IDENTITY_RTOL * scale:
        raise NumericFailure(f"synthesis identity {name} violated: residual {residual:.3e}")


def _precheck_detectability(A, Ct, K, dec, stab_tol, rank_tol, struct_tol):
    """Dual-route detectability gate; refusal carries rank witnesses."""
    by_struct = structan.is_partially_detectable_structural(dec, struct_tol=struct_tol)
    by_rank = structan.is_partially_detectable_rank(
        A, Ct, K, stab_tol=stab_tol, rank_tol=rank_tol
    )
    if by_struct.detectable != by_rank.detectable:
        raise InternalInconsistencyError(
            "detectability routes disagree during synthesis precheck; "
            f"rank route {by_rank.detectable}, structural route {by_struct.detectable}"
        )
    if not by_rank.detectable:
        failing = by_rank.failing
        desc = ", ".join(
            f"lambda={w.lam:.6g}: rank with functional {w.rank_with_k} != {w.rank_without_k}"
            for w in failing
        )
        raise DetectabilityError(
            f"not partially detectable with respect to the functional; witnesses: {desc}",
            witnesses=failing,
        )


def _core_synthesis(A, B, Ct, Dt, K, p_sizes, stab_tol, rank_tol, struct_tol, beta):
    """Shared construction: decomposition, T, stacked gain, per-sensor split.

    Returns (dec, T, Lbar, Lbar_parts, Nbar).
    """
    dec = structan.decompose(A, Ct, K, B=B, stab_tol=stab_tol, rank_tol=rank_tol)
    _precheck_detectability(A, Ct, K, dec, stab_tol, rank_tol, struct_tol)
    q = dec.q
    T = dec.P[:, :q].T
    Lbar = matnum.stabilizing_output_injection(T @ A @ T.T, Ct @ T.T, beta=beta)
    Nbar = T @ A @ T.T - Lbar @ (Ct @ T.T)
    parts = []
    at = 0
    for p in p_sizes:
        parts.append(Lbar[:, at : at + p])
        at += p
    return dec, T, Lbar, parts, Nbar


def _node_matrices(A, B, T, Li, Ci, Di, K):
    N = T @ A @ T.T - Li @ (Ci @ T.T)
    H = T @ B - Li @ Di
    R = K @ T.T
    return N, H, R


def _verify_node_identities(A, B, T, K, nodes, sensors):
    scale = _identity_scale(T @ A, K, *(nd.N for nd in nodes))
    for i, (nd, s) in enumerate(zip(nodes, sensors)):
        _check_identity(
            f"N{i+1} T + L{i+1} C{i+1} = T A",
            float(np.linalg.norm(nd.N @ T + nd.L @ s.C - T @ A, "fro")),
            scale,
        )
        _check_identity(
            f"H{i+1} + L{i+1} D{i+1} = T B",
            float(np.linalg.norm(nd.H + nd.L @ s.D - T @ B, "fro")),
            _identity_scale(T @ B),
        )
        _check_identity(
            f"R{i+1} = K T'",
            float(np.linalg.norm(nd.R - K @ T.T, "fro")),
            _identity_scale(K),
        )
    _check_identity(
        "K T' T = K",
        float(np.linalg.norm(K @ T.T @ T - K, "fro")),
        _identity_scale(K),
    )
    q = T.shape[0]
    _check_identity(
        "T T' = I",
        float(np.linalg.norm(T @ T.T - np.eye(q), "fro")),
        1.0,
    )


def synth_centralized(A, B, C, D, K, stab_tol=STAB_TOL_DEFAULT, rank_tol=None,
                      struct_tol=structan.STRUCT_TOL_DEFAULT, beta=None):
    """Design a centralized partial-state estimator for (A, B, C, D, K).

    Refuses with a witness-carrying error when (A, C) is not partially
    detectable with respect to K.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    D = np.asarray(D, dtype=float)
    K = np.asarray(K, dtype=float)
    dec, T, Lbar, _, N = _core_synthesis(
        A, B, C, D, K, (C.shape[0],), stab_tol, rank_tol, struct_tol, beta
    )
    H = T @ B - Lbar @ D
    R = K @ T.T
    if N.size and matnum.spectral_abscissa(N) >= 0:
        raise SynthesisFailure("estimator matrix N failed the stability check")
    est = CentralizedEstimator(T=T, N=N, H=H, L=Lbar, R=R)
    _verify_node_identities(
        A, B, T, K,
        [NodeEstimator(N, H, Lbar, np.eye(dec.q), R)],
        [Sensor(C=C, D=D)],
    )
    return est


def synth_distributed(
    plant: PlantModel,
    graph: CommGraph,
    gamma=None,
    stab_tol=STAB_TOL_DEFAULT,
    rank_tol=None,
    struct_tol=structan.STRUCT_TOL_DEFAULT,
    beta=None,
    use_lambda1_estimate=False,
):
    """Design one estimator per sensor node, coupled over the graph.

    Parameters
    ----------
    gamma : float, optional
        Override for the coupling gain.  The certificate bound is skipped
        but the final eigenvalue verification of the coupled error
        dynamics never is.
    use_lambda1_estimate : bool
        Use sqrt(Lambda3) in place of the largest eigenvalue Lambda1 when
        forming the gain bound (upper estimate, not sharp).

    Returns
    -------
    (DistributedEstimator, SynthesisReport)
    """
    if graph.l != plant.l:
        raise DimensionError(f"graph has {graph.l} nodes but plant has {plant.l} sensors")
    topo = analyze_topology(graph)
    if not topo.satisfies_assumption:
        raise TopologyError(
            "communication graph must be undirected and connected, or directed, "
            "balanced and strongly connected"
        )
    Ct, Dt = stacked_output(plant)
    A, B, K, l = plant.A, plant.B, plant.K, plant.l
    dec, T, Lbar, Lbar_parts, Nbar = _core_synthesis(
        A, B, Ct, Dt, K, plant.p_sizes, stab_tol, rank_tol, struct_tol, beta
    )
    q = dec.q

    if q > 0:
        Pbar = matnum.solve_lyapunov(Nbar, np.eye(q))
        Lambda2 = float(np.linalg.eigvalsh(Nbar.T @ Pbar + Pbar @ Nbar).max())
        if Lambda2 >= 0:
            raise NumericFailure(f"Lyapunov certificate failed: Lambda2 = {Lambda2:.3e} >= 0")
        Mi = np.linalg.inv(Pbar)
        Mi = 0.5 * (Mi + Mi.T)
    else:
        Pbar = np.zeros((0, 0))
        Lambda2 = None
        Mi = np.zeros((0, 0))

    nodes = []
    for i, sensor in enumerate(plant.sensors):
        Li = l * Lbar_parts[i]
        N, H, R = _node_matrices(A, B, T, Li, sensor.C, sensor.D, K)
        nodes.append(NodeEstimator(N=N, H=H, L=Li, M=Mi, R=R))
    _verify_node_identities(A, B, T, K, nodes, plant.sensors)

    Nblk = sla.block_diag(*(nd.N for nd in nodes)) if q else np.zeros((0, 0))
    if q > 0:
        Minv_blk = sla.block_diag(*([Pbar] * l))
        S = Nblk.T @ Minv_blk + Minv_blk @ Nblk
        eigs_S = np.linalg.eigvalsh(S)
        Lambda3 = float((eigs_S**2).max())
        Lambda1 = float(np.sqrt(Lambda3)) if use_lambda1_estimate else float(eigs_S.max())
    else:
        Lambda1 = Lambda3 = 0.0

    lambda2 = topo.lambda2
    if l == 1:
        gamma_bound = None
        gamma_used = 0.0
    else:
        gamma_bound = (Lambda1 - Lambda3 / Lambda2) / lambda2 if q > 0 else 0.0
        gamma_used = float(gamma) if gamma is not None else 1.05 * max(gamma_bound, 0.0) + 0.1

    est = DistributedEstimator(T=T, nodes=tuple(nodes), gamma=gamma_used)

    # final certificate, independent of the derivation above
    abscissa = coupled_error_abscissa(est, graph)
    if abscissa >= 0:
        if gamma is not None:
            raise SynthesisFailure(
                f"coupled error dynamics unstable with the requested gain "
                f"gamma={gamma_used:g} (spectral abscissa {abscissa:.6g})"
            )
        raise InternalInconsistencyError(
            f"internal error: synthesized gain failed the final eigenvalue check "
            f"(abscissa {abscissa:.6g})"
        )

    report = SynthesisReport(
        Lbar=Lbar,
        Pbar=Pbar,
        Nbar=Nbar,
        Lambda1=Lambda1,
        Lambda2=Lambda2,
        Lambda3=Lambda3,
        lambda2=lambda2,
        gamma_bound=gamma_bound,
        gamma_used=gamma_used,
        n1=dec.n1,
        n2=dec.n2,
        n3=dec.n3,
    )
    return est, report


def coupled_error_matrix(est: DistributedEstimator, graph: CommGraph):
    """Closed-loop error dynamics matrix blkdiag(N_i) - gamma M (L x I_q)."""
    q, l = est.q, est.l
    if graph.l != l:
        raise DimensionError(f"graph has {graph.l} nodes but estimator has {l}")
    if q == 0:
        return np.zeros((0, 0))
    Nblk = sla.block_diag(*(nd.N for nd in est.nodes))
    Mblk = sla.block_diag(*(nd.M for nd in est.nodes))
    return Nblk - est.gamma * Mblk @ np.kron(laplacian(graph), np.eye(q))


def coupled_error_abscissa(est: DistributedEstimator, graph: CommGraph):
    M = coupled_error_matrix(est, graph)
    return matnum.spectral_abscissa(M) if M.size else -np.inf


@dataclass(frozen=True)
class EstimatorAudit:
    residuals: dict
    checks: dict
    passed: bool


def verify_estimator(plant: PlantModel, graph: CommGraph, est: DistributedEstimator,
                     tol=IDENTITY_RTOL):
    """Re-check every estimator invariant from the raw matrices.

    Reports per-identity relative residuals and boolean checks; never
    raises on a failed check (callers inspect ``passed``).
    """
    A, B, K = plant.A, plant.B, plant.K
    T = est.T
    q = est.q
    residuals = {}
    checks = {}
    scale = _identity_scale(T @ A, K, *(nd.N for nd in est.nodes))
    for i, (nd, s) in enumerate(zip(est.nodes, plant.sensors), start=1):
        residuals[f"N{i}T+L{i}C{i}-TA"] = float(
            np.linalg.norm(nd.N @ T + nd.L @ s.C - T @ A, "fro")
        ) / scale
        residuals[f"H{i}+L{i}D{i}-TB"] = float(
            np.linalg.norm(nd.H + nd.L @ s.D - T @ B, "fro")
        ) / _identity_scale(T @ B)
        residuals[f"R{i}-KT'"] = float(np.linalg.norm(nd.R - K @ T.T, "fro")) / _identity_scale(K)
    residuals["KT'T-K"] = float(np.linalg.norm(K @ T.T @ T - K, "fro")) / _identity_scale(K)
    residuals["TT'-I"] = float(np.linalg.norm(T @ T.T - np.eye(q), "fro"))
    checks["identities"] = all(r <= tol for r in residuals.values())

    m_ref = est.nodes[0].M
    same_m = all(np.array_equal(nd.M, m_ref) for nd in est.nodes)
    try:
        m_pd = q == 0 or matnum.is_positive_definite(0.5 * (m_ref + m_ref.T))
    except PreconditionError:
        m_pd = False
    checks["M_equal"] = bool(same_m)
    checks["M_positive_definite"] = bool(m_pd)

    if q > 0:
        Nsum = sum(nd.N for nd in est.nodes)
        checks["sum_N_stable"] = bool(matnum.spectral_abscissa(Nsum) < 0)
    else:
        checks["sum_N_stable"] = True
    abscissa = coupled_error_abscissa(est, graph)
    residuals["coupled_abscissa"] = float(abscissa) if np.isfinite(abscissa) else -np.inf
    checks["coupled_stable"] = bool(abscissa < 0)

    passed = all(checks.values())
    return EstimatorAudit(residuals=residuals, checks=checks, passed=passed)


# ---------------------------------------------------------------------------
# estimator file round-trip


def _mat_to_list(M):
    return np.asarray(M, dtype=float).tolist()


def estimator_to_dict(est: DistributedEstimator, report: SynthesisReport | None = None):
    out = {
        "T": _mat_to_list(est.T),
        "gamma": float(est.gamma),
        "nodes": [
            {
                "N": _mat_to_list(nd.N),
                "H": _mat_to_list(nd.H),
                "L": _mat_to_list(nd.L),
                "M": _mat_to_list(nd.M),
                "R": _mat_to_list(nd.R),
            }
            for nd in est.nodes
        ],
    }
    if report is not None:
        out["report"] = {
            "Lambda1": report.Lambda1,
            "Lambda2": report.Lambda2,
            "Lambda3": report.Lambda3,
            "lambda2": report.lambda2,
            "gamma_bound": report.gamma_bound,
            "gamma_used": report.gamma_used,
            "n1": report.n1,
            "n2": report.n2,
            "n3": report.n3,
        }
    return out


def _np2(obj, where):
    M = np.array(obj, dtype=float)
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ScenarioError(f"{where}: expected a finite matrix")
    return M


def estimator_from_dict(data):
    if not isinstance(data, dict):
        raise ScenarioError("estimator file: expected an object")
    unknown = set(data) - {"T", "gamma", "nodes", "report"}
    if unknown:
        raise ScenarioError(f"estimator file: unknown keys {sorted(unknown)}")
    for key in ("T", "gamma", "nodes"):
        if key not in data:
            raise ScenarioError(f"estimator file: missing key {key!r}")
    T = _np2(data["T"], "estimator.T")
    q = T.shape[0]
    nodes = []
    for i, nd in enumerate(data["nodes"]):
        unknown = set(nd) - {"N", "H", "L", "M", "R"}
        if unknown:
            raise ScenarioError(f"estimator.nodes[{i}]: unknown keys {sorted(unknown)}")
        try:
            nodes.append(
                NodeEstimator(
                    N=_np2(nd["N"], f"estimator.nodes[{i}].N"),
                    H=_np2(nd["H"], f"estimator.nodes[{i}].H"),
                    L=_np2(nd["L"], f"estimator.nodes[{i}].L"),
                    M=_np2(nd["M"], f"estimator.nodes[{i}].M"),
                    R=_np2(nd["R"], f"estimator.nodes[{i}].R"),
                )
            )
        except KeyError as exc:
            raise ScenarioError(f"estimator.nodes[{i}]: missing key {exc}") from exc
    for i, nd in enumerate(nodes):
        if nd.N.shape != (q, q) or nd.M.shape != (q, q) or nd.R.shape[1] != q:
            raise ScenarioError(f"estimator.nodes[{i}]: shapes inconsistent with T ({q} states)")
    gamma = data["gamma"]
    if isinstance(gamma, bool) or not isinstance(gamma, (int, float)):
        raise ScenarioError("estimator.gamma: expected a number")
    return DistributedEstimator(T=T, nodes=tuple(nodes), gamma=float(gamma))


def save_estimator(path, est, report=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(estimator_to_dict(est, report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_estimator(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read estimator file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {path}: {exc}") from exc
    return estimator_from_dict(data)


def as_single_node(est: CentralizedEstimator, M=None):
    """Wrap a centralized estimator as a one-node network (gamma = 0)."""
    q = est.q
    Mi = np.eye(q) if M is None else np.asarray(M, dtype=float)
    node = NodeEstimator(N=est.N, H=est.H, L=est.L, M=Mi, R=est.R)
    return DistributedEstimator(T=est.T, nodes=(node,), gamma=0.0)
