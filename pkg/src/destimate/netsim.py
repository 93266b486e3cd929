"""Deterministic fixed-step simulation of the plant coupled with the estimators.

The plant and all node estimators are integrated together as one stacked
linear ODE with classical 4th-order Runge-Kutta.  For an LTI system the
RK4 step is an affine map, so the step matrices are precomputed once and
each step costs a handful of matrix-vector products.

A stability guard (on by default) splits each output step into the
smallest number of equal substeps keeping ``substep * spectral_radius``
inside the RK4 stability region; the output grid is unchanged and the
substep count is a deterministic function of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, PreconditionError
from .sysmodel import PlantModel, SimulationConfig, SignalSpec, zero_signal
from .synth import CommGraph, DistributedEstimator, coupled_error_matrix

#: dt * rho(F) budget per RK4 substep; the real-axis stability boundary is
#: ~2.785, kept with margin.
RK4_STEP_BUDGET = 2.5

BALL_RADIUS = 1e-3
V_REL_TOL = 1e-9


@dataclass(frozen=True)
class SimulationTrace:
    times: np.ndarray          # (steps+1,)
    x: np.ndarray              # (steps+1, n)
    w: np.ndarray              # (l, steps+1, q)
    z: np.ndarray              # (steps+1, r)
    z_nodes: np.ndarray        # (l, steps+1, r)
    e_nodes: np.ndarray        # (l, steps+1, r)
    e_norms: np.ndarray        # (l, steps+1)
    etilde: np.ndarray         # (l, steps+1, q)
    V: np.ndarray              # (steps+1,)
    completed: bool
    substeps: int

    @property
    def l(self):
        return self.w.shape[0]

    @property
    def t_end(self):
        return float(self.times[-1]) if self.times.size else 0.0


@dataclass(frozen=True)
class NodeMetrics:
    final_error_norm: float
    time_to_ball: float        # inf when the ball is never entered for good
    in_ball_at_end: bool


@dataclass(frozen=True)
class ConvergenceMetrics:
    nodes: tuple[NodeMetrics, ...]
    v_violations: int
    completed: bool
    ball_radius: float

    @property
    def all_converged(self):
        return self.completed and all(np.isfinite(nd.time_to_ball) for nd in self.nodes)


def _check_dimensions(plant: PlantModel, est: DistributedEstimator):
    n, m, r = plant.n, plant.m, plant.r
    q = est.q
    if est.T.shape != (q, n):
        raise DimensionError(f"T is {est.T.shape}, expected ({q}, {n})")
    if est.l != plant.l:
        raise DimensionError(f"estimator has {est.l} nodes but plant has {plant.l} sensors")
    for i, (nd, s) in enumerate(zip(est.nodes, plant.sensors), start=1):
        p_i = s.C.shape[0]
        if nd.N.shape != (q, q):
            raise DimensionError(f"node {i}: N is {nd.N.shape}, expected ({q}, {q})")
        if nd.H.shape != (q, m):
            raise DimensionError(f"node {i}: H is {nd.H.shape}, expected ({q}, {m})")
        if nd.L.shape != (q, p_i):
            raise DimensionError(f"node {i}: L is {nd.L.shape}, expected ({q}, {p_i})")
        if nd.M.shape != (q, q):
            raise DimensionError(f"node {i}: M is {nd.M.shape}, expected ({q}, {q})")
        if nd.R.shape != (r, q):
            raise DimensionError(f"node {i}: R is {nd.R.shape}, expected ({r}, {q})")


def _rk4_step_maps(F, G, h):
    """Affine RK4 step X+ = Phi X + W1 G u(t) + Wm G u(t+h/2) + We G u(t+h)."""
    N = F.shape[0]
    I = np.eye(N)
    E = h * F
    E2 = E @ E
    E3 = E2 @ E
    E4 = E3 @ E
    Phi = I + E + E2 / 2.0 + E3 / 6.0 + E4 / 24.0
    W1 = (h / 6.0) * (I + E + E2 / 2.0 + E3 / 4.0)
    Wm = (h / 6.0) * (4.0 * I + 2.0 * E + E2 / 2.0)
    We = (h / 6.0) * I
    return Phi, W1 @ G, Wm @ G, We @ G


def simulate(
    plant: PlantModel,
    graph: CommGraph,
    est: DistributedEstimator,
    sim: SimulationConfig,
    stability_guard=True,
):
    """Integrate plant + estimators and record the full trace.

    The estimator states follow
    ``w_i' = N_i w_i + H_i u + L_i y_i + gamma M_i sum_j a_ij (w_j - w_i)``
    with ``y_i = C_i x + D_i u``.  On numeric overflow (growing inputs and
    unstable plants will eventually exceed double range) the trace is cut
    at the last finite step and ``completed`` is False.
    """
    if sim.dt <= 0 or sim.t_end <= 0:
        raise PreconditionError("dt and t_end must be positive")
    _check_dimensions(plant, est)
    n, m, r, l, q = plant.n, plant.m, plant.r, plant.l, est.q

    x0 = np.zeros(n) if sim.x0 is None else np.asarray(sim.x0, dtype=float)
    if x0.shape != (n,):
        raise DimensionError(f"x0 has shape {x0.shape}, expected ({n},)")
    if sim.w0 is None:
        w0 = [np.zeros(q) for _ in range(l)]
    else:
        if len(sim.w0) != l:
            raise DimensionError(f"w0 has {len(sim.w0)} node vectors, expected {l}")
        w0 = [np.asarray(v, dtype=float) for v in sim.w0]
        for i, v in enumerate(w0):
            if v.shape != (q,):
                raise DimensionError(f"w0[{i}] has shape {v.shape}, expected ({q},)")
    signal = sim.input if sim.input is not None else zero_signal(m)
    if signal.m != m:
        raise DimensionError(f"input signal has {signal.m} channels, expected {m}")

    dim = n + l * q
    F = np.zeros((dim, dim))
    F[:n, :n] = plant.A
    for i, (nd, s) in enumerate(zip(est.nodes, plant.sensors)):
        F[n + i * q : n + (i + 1) * q, :n] = nd.L @ s.C
    F[n:, n:] = coupled_error_matrix(est, graph) if q else np.zeros((0, 0))
    G = np.vstack([plant.B] + [nd.H + nd.L @ s.D for nd, s in zip(est.nodes, plant.sensors)])

    steps = max(1, int(round(sim.t_end / sim.dt)))
    nsub = 1
    if stability_guard and dim:
        rho = float(np.abs(np.linalg.eigvals(F)).max())
        nsub = max(1, int(np.ceil(sim.dt * rho / RK4_STEP_BUDGET)))
    h = sim.dt / nsub

    Phi, W1G, WmG, WeG = _rk4_step_maps(F, G, h)
    # inputs on the half-substep grid: index 2*s is the start of substep s
    half_ts = 0.5 * h * np.arange(2 * steps * nsub + 1)
    u_half = signal.evaluate_grid(half_ts)

    X = np.concatenate([x0] + w0)
    out = np.empty((steps + 1, dim))
    out[0] = X
    completed = True
    last = steps
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            for s in range(nsub):
                j = 2 * (k * nsub + s)
                X = Phi @ X + W1G @ u_half[j] + WmG @ u_half[j + 1] + WeG @ u_half[j + 2]
            if not np.all(np.isfinite(X)):
                completed = False
                last = k
                break
            out[k + 1] = X
    out = out[: last + 1]
    times = sim.dt * np.arange(last + 1)

    x = out[:, :n]
    w = np.stack([out[:, n + i * q : n + (i + 1) * q] for i in range(l)])
    z = x @ plant.K.T
    z_nodes = np.stack([w[i] @ est.nodes[i].R.T for i in range(l)])
    e_nodes = z_nodes - z
    e_norms = np.linalg.norm(e_nodes, axis=2)
    etilde = np.stack([w[i] - x @ est.T.T for i in range(l)])
    if q:
        Pbar = np.linalg.inv(est.nodes[0].M)
        Pbar = 0.5 * (Pbar + Pbar.T)
        V = sum(np.einsum("ij,jk,ik->i", etilde[i], Pbar, etilde[i]) for i in range(l))
    else:
        V = np.zeros(last + 1)
    return SimulationTrace(
        times=times,
        x=x,
        w=w,
        z=z,
        z_nodes=z_nodes,
        e_nodes=e_nodes,
        e_norms=e_norms,
        etilde=etilde,
        V=np.asarray(V, dtype=float),
        completed=completed,
        substeps=nsub,
    )


def convergence_metrics(trace: SimulationTrace, ball=BALL_RADIUS, v_rel_tol=V_REL_TOL):
    """Per-node convergence summary plus the Lyapunov monotonicity count.

    ``time_to_ball`` is the first time after which the error norm stays
    inside the ball for the rest of the trace (0 when it never leaves,
    inf when it is outside at the end).  A V-violation is a step where V
    increases by more than ``v_rel_tol * V``.
    """
    if trace.times.size == 0:
        raise PreconditionError("empty trace")
    nodes = []
    for i in range(trace.l):
        e = trace.e_norms[i]
        outside = np.nonzero(e > ball)[0]
        if outside.size == 0:
            ttb = 0.0
        elif outside[-1] == e.size - 1:
            ttb = np.inf
        else:
            ttb = float(trace.times[outside[-1] + 1])
        nodes.append(
            NodeMetrics(
                final_error_norm=float(e[-1]),
                time_to_ball=ttb,
                in_ball_at_end=bool(e[-1] <= ball),
            )
        )
    dV = np.diff(trace.V)
    violations = int((dV > v_rel_tol * trace.V[:-1]).sum())
    return ConvergenceMetrics(
        nodes=tuple(nodes),
        v_violations=violations,
        completed=trace.completed,
        ball_radius=float(ball),
    )


def _fmt(v):
    return f"{v:.17g}"


def trace_to_csv(trace: SimulationTrace, path):
    """Write the trace as CSV: 17 significant digits, LF line endings."""
    n = trace.x.shape[1]
    l = trace.l
    q = trace.w.shape[2]
    r = trace.z.shape[1]
    header = ["t"]
    header += [f"x{k+1}" for k in range(n)]
    for i in range(1, l + 1):
        header += [f"w{i}_{k+1}" for k in range(q)]
        header += [f"z{i}_{k+1}" for k in range(r)]
        header += [f"e{i}_norm"]
    header += [f"z_{k+1}" for k in range(r)]
    header += ["V"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for s in range(trace.times.size):
            row = [_fmt(trace.times[s])]
            row += [_fmt(v) for v in trace.x[s]]
            for i in range(l):
                row += [_fmt(v) for v in trace.w[i, s]]
                row += [_fmt(v) for v in trace.z_nodes[i, s]]
                row += [_fmt(trace.e_norms[i, s])]
            row += [_fmt(v) for v in trace.z[s]]
            row += [_fmt(trace.V[s])]
            fh.write(",".join(row) + "\n")


def write_error_norm_files(trace: SimulationTrace, stem):
    """One gnuplot-ready two-column file (t, ||e_i||) per node."""
    paths = []
    for i in range(trace.l):
        path = f"{stem}_e{i+1}.dat"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# t e{i+1}_norm\n")
            for s in range(trace.times.size):
                fh.write(f"{_fmt(trace.times[s])} {_fmt(trace.e_norms[i, s])}\n")
        paths.append(path)
    return paths
