"""Plant, sensor-network and scenario data model with strict validation.

The JSON scenario schema accepted by :func:`parse_scenario`::

    { "plant": {"A": [[..]], "B": [[..]], "K": [[..]],
                "sensors": [{"C": [[..]], "D": [[..]]}, ...]},
      "graph": {"adjacency": [[0, 1], [1, 0]]},
      "synthesis": {"gamma": .., "stab_tol": .., "rank_tol": ..},      # optional
      "simulation": {"t_end": .., "dt": .., "x0": [..],
                     "w0": [[..], ...], "input": [[term, ...], ...]} } # optional

Matrices are row-major nested arrays of finite doubles.  Unknown keys are
a hard error.  Adjacency entries must be exactly 0 or 1 (weighted graphs
are rejected).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, ScenarioError
from .matnum import EPS

SIGNAL_KINDS = ("constant", "sin", "cos", "exp", "ramp", "step")


@dataclass(frozen=True)
class Sensor:
    """One node's measurement: y_i = C_i x + D_i u."""

    C: np.ndarray
    D: np.ndarray


@dataclass(frozen=True)
class PlantModel:
    """LTI plant x' = Ax + Bu observed by l sensors, functional z = Kx."""

    A: np.ndarray
    B: np.ndarray
    sensors: tuple[Sensor, ...]
    K: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise PreconditionError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise PreconditionError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.K.shape[1] != n:
            raise PreconditionError(f"K has {self.K.shape[1]} columns, expected {n}")
        if len(self.sensors) < 1:
            raise PreconditionError("at least one sensor is required")
        m = self.B.shape[1]
        for i, s in enumerate(self.sensors):
            if s.C.shape[1] != n:
                raise PreconditionError(f"sensor {i}: C has {s.C.shape[1]} columns, expected {n}")
            if s.D.shape != (s.C.shape[0], m):
                raise PreconditionError(
                    f"sensor {i}: D must be {s.C.shape[0]}x{m}, got {s.D.shape}"
                )

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def r(self):
        return self.K.shape[0]

    @property
    def l(self):
        return len(self.sensors)

    @property
    def p_sizes(self):
        return tuple(s.C.shape[0] for s in self.sensors)

    @property
    def p_tilde(self):
        return sum(self.p_sizes)


def stacked_output(plant: PlantModel):
    """Row-stack the sensor matrices in index order: (C~, D~)."""
    Ct = np.vstack([s.C for s in plant.sensors])
    Dt = np.vstack([s.D for s in plant.sensors])
    return Ct, Dt


@dataclass(frozen=True)
class CommGraph:
    """Unweighted directed communication graph on l estimator nodes.

    adjacency[i, j] = 1 iff node j sends information to node i.
    """

    adjacency: np.ndarray

    def __post_init__(self):
        A = self.adjacency
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise PreconditionError(f"adjacency must be square, got {A.shape}")
        if not np.all((A == 0) | (A == 1)):
            raise PreconditionError("adjacency entries must be 0 or 1 (weighted graphs are not supported)")
        if np.any(np.diag(A) != 0):
            raise PreconditionError("adjacency diagonal must be zero (no self-loops)")

    @property
    def l(self):
        return self.adjacency.shape[0]


def laplacian(graph: CommGraph):
    """Graph Laplacian L = D - A; rows sum to zero by construction."""
    A = graph.adjacency.astype(float)
    return np.diag(A.sum(axis=1)) - A


@dataclass(frozen=True)
class TopologyReport:
    is_undirected: bool
    is_balanced: bool
    is_strongly_connected: bool
    is_connected_undirected: bool
    satisfies_assumption: bool
    lambda2: float | None


def _reaches_all(adj, start=0):
    l = adj.shape[0]
    seen = np.zeros(l, dtype=bool)
    stack = [start]
    seen[start] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def analyze_topology(graph: CommGraph):
    """Classify the graph and compute the consensus eigenvalue lambda2.

    The connectivity assumption holds iff the graph is undirected and
    connected, or directed, balanced and strongly connected.  lambda2 is
    the smallest nonzero eigenvalue of L + Lᵀ, defined only when the
    assumption holds and l >= 2 (a single node needs no coupling).
    """
    A = graph.adjacency
    l = graph.l
    # reception matrix: adj[i, j] = edge j -> i; walk edges forward
    fwd = A.T
    is_undirected = bool(np.array_equal(A, A.T))
    is_balanced = bool(np.array_equal(A.sum(axis=0), A.sum(axis=1)))
    is_strong = _reaches_all(fwd) and _reaches_all(fwd.T)
    sym = ((A + A.T) > 0).astype(int)
    is_conn_undir = _reaches_all(sym)
    ok = (is_undirected and is_conn_undir) or (
        not is_undirected and is_balanced and is_strong
    )
    lam2 = None
    if ok and l >= 2:
        L = laplacian(graph)
        w = np.linalg.eigvalsh(L + L.T)
        nonzero = w[w > 1e-9 * l]
        if nonzero.size == 0:
            raise PreconditionError("Laplacian has no nonzero eigenvalue despite connectivity")
        lam2 = float(nonzero.min())
    return TopologyReport(
        is_undirected=is_undirected,
        is_balanced=is_balanced,
        is_strongly_connected=is_strong,
        is_connected_undirected=is_conn_undir,
        satisfies_assumption=ok,
        lambda2=lam2,
    )


# ---------------------------------------------------------------------------
# input signals


@dataclass(frozen=True)
class SignalTerm:
    """One additive term: amplitude * kind(rate * t + phase)."""

    kind: str
    amplitude: float = 1.0
    rate: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ScenarioError(f"unknown signal kind {self.kind!r}; expected one of {SIGNAL_KINDS}")


def _eval_kind(kind, s):
    if kind == "constant":
        return np.ones_like(s)
    if kind == "sin":
        return np.sin(s)
    if kind == "cos":
        return np.cos(s)
    if kind == "exp":
        return np.exp(s)
    if kind == "ramp":
        return np.maximum(s, 0.0)
    return (s >= 0.0).astype(float)  # step


@dataclass(frozen=True)
class SignalSpec:
    """Per-channel input signal u(t); channel c sums its terms at time t."""

    channels: tuple[tuple[SignalTerm, ...], ...]

    @property
    def m(self):
        return len(self.channels)

    def evaluate(self, t):
        return self.evaluate_grid(np.atleast_1d(float(t)))[0]

    def evaluate_grid(self, ts):
        """Vectorized evaluation: shape (len(ts), m)."""
        ts = np.asarray(ts, dtype=float)
        out = np.zeros((ts.size, self.m))
        for c, terms in enumerate(self.channels):
            for term in terms:
                out[:, c] += term.amplitude * _eval_kind(term.kind, term.rate * ts + term.phase)
        return out


def zero_signal(m):
    return SignalSpec(channels=tuple(() for _ in range(m)))


# ---------------------------------------------------------------------------
# scenario configuration


@dataclass(frozen=True)
class SynthesisOptions:
    gamma: float | None = None
    stab_tol: float | None = None
    rank_tol: float | None = None


@dataclass(frozen=True)
class SimulationConfig:
    t_end: float = 10.0
    dt: float = 1e-3
    x0: np.ndarray | None = None
    w0: tuple[np.ndarray, ...] | None = None
    input: SignalSpec | None = None


@dataclass(frozen=True)
class Scenario:
    plant: PlantModel
    graph: CommGraph
    synthesis: SynthesisOptions = field(default_factory=SynthesisOptions)
    simulation: SimulationConfig | None = None


def _check_keys(obj, where, required, optional=()):
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise ScenarioError(f"{where}: missing keys {sorted(missing)}")


def _matrix(obj, where, rows=None, cols=None):
    try:
        M = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: not a numeric matrix ({exc})") from exc
    if M.ndim == 1 and M.size == 0:
        M = M.reshape(0, 0)
    if M.ndim != 2:
        raise ScenarioError(f"{where}: expected a nested array (matrix), got ndim={M.ndim}")
    if not np.all(np.isfinite(M)):
        raise ScenarioError(f"{where}: non-finite entries")
    if rows is not None and M.shape[0] != rows:
        raise ScenarioError(f"{where}: expected {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        raise ScenarioError(f"{where}: expected {cols} columns, got {M.shape[1]}")
    return M


def _vector(obj, where, size=None):
    try:
        v = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: not a numeric vector ({exc})") from exc
    if v.ndim != 1:
        raise ScenarioError(f"{where}: expected a flat array, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise ScenarioError(f"{where}: non-finite entries")
    if size is not None and v.size != size:
        raise ScenarioError(f"{where}: expected {size} entries, got {v.size}")
    return v


def _number(obj, where, positive=False, nonneg=False):
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ScenarioError(f"{where}: expected a number")
    v = float(obj)
    if not math.isfinite(v):
        raise ScenarioError(f"{where}: must be finite")
    if positive and v <= 0:
        raise ScenarioError(f"{where}: must be > 0")
    if nonneg and v < 0:
        raise ScenarioError(f"{where}: must be >= 0")
    return v


def _parse_plant(obj):
    _check_keys(obj, "plant", required=("A", "B", "K", "sensors"))
    A = _matrix(obj["A"], "plant.A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ScenarioError(f"plant.A must be square, got {A.shape}")
    B = _matrix(obj["B"], "plant.B", rows=n)
    K = _matrix(obj["K"], "plant.K", cols=n)
    if not isinstance(obj["sensors"], list) or not obj["sensors"]:
        raise ScenarioError("plant.sensors: expected a non-empty list")
    sensors = []
    for i, s in enumerate(obj["sensors"]):
        _check_keys(s, f"plant.sensors[{i}]", required=("C", "D"))
        C = _matrix(s["C"], f"plant.sensors[{i}].C", cols=n)
        D = _matrix(s["D"], f"plant.sensors[{i}].D", rows=C.shape[0], cols=B.shape[1])
        sensors.append(Sensor(C=C, D=D))
    try:
        return PlantModel(A=A, B=B, sensors=tuple(sensors), K=K)
    except PreconditionError as exc:
        raise ScenarioError(f"plant: {exc}") from exc


def _parse_graph(obj, l_expected):
    _check_keys(obj, "graph", required=("adjacency",))
    M = _matrix(obj["adjacency"], "graph.adjacency")
    if np.any((M != 0) & (M != 1)):
        raise ScenarioError("graph.adjacency: entries must be 0 or 1 (weighted graphs rejected)")
    try:
        g = CommGraph(adjacency=M.astype(int))
    except PreconditionError as exc:
        raise ScenarioError(f"graph: {exc}") from exc
    if g.l != l_expected:
        raise ScenarioError(
            f"graph has {g.l} nodes but the plant has {l_expected} sensors"
        )
    return g


def _parse_signal(obj, m):
    if not isinstance(obj, list):
        raise ScenarioError("simulation.input: expected a list (one term list per channel)")
    if len(obj) != m:
        raise ScenarioError(f"simulation.input: expected {m} channels, got {len(obj)}")
    channels = []
    for c, terms in enumerate(obj):
        if not isinstance(terms, list):
            raise ScenarioError(f"simulation.input[{c}]: expected a list of terms")
        parsed = []
        for k, t in enumerate(terms):
            where = f"simulation.input[{c}][{k}]"
            _check_keys(t, where, required=("kind",), optional=("amplitude", "rate", "phase"))
            kind = t["kind"]
            if kind not in SIGNAL_KINDS:
                raise ScenarioError(f"{where}: unknown kind {kind!r}")
            parsed.append(
                SignalTerm(
                    kind=kind,
                    amplitude=_number(t.get("amplitude", 1.0), f"{where}.amplitude"),
                    rate=_number(t.get("rate", 1.0), f"{where}.rate"),
                    phase=_number(t.get("phase", 0.0), f"{where}.phase"),
                )
            )
        channels.append(tuple(parsed))
    return SignalSpec(channels=tuple(channels))


def _parse_simulation(obj, plant):
    _check_keys(obj, "simulation", required=("t_end", "dt"), optional=("x0", "w0", "input"))
    t_end = _number(obj["t_end"], "simulation.t_end", positive=True)
    dt = _number(obj["dt"], "simulation.dt", positive=True)
    x0 = _vector(obj["x0"], "simulation.x0", size=plant.n) if "x0" in obj else None
    w0 = None
    if "w0" in obj:
        if not isinstance(obj["w0"], list) or len(obj["w0"]) != plant.l:
            raise ScenarioError(f"simulation.w0: expected {plant.l} node vectors")
        w0 = tuple(_vector(v, f"simulation.w0[{i}]") for i, v in enumerate(obj["w0"]))
    sig = _parse_signal(obj["input"], plant.m) if "input" in obj else None
    return SimulationConfig(t_end=t_end, dt=dt, x0=x0, w0=w0, input=sig)


def parse_scenario(data):
    """Validate and convert a scenario dict into typed model objects."""
    _check_keys(data, "scenario", required=("plant", "graph"), optional=("synthesis", "simulation"))
    plant = _parse_plant(data["plant"])
    graph = _parse_graph(data["graph"], plant.l)
    synth = SynthesisOptions()
    if "synthesis" in data:
        s = data["synthesis"]
        _check_keys(s, "synthesis", required=(), optional=("gamma", "stab_tol", "rank_tol"))
        synth = SynthesisOptions(
            gamma=_number(s["gamma"], "synthesis.gamma", nonneg=True) if "gamma" in s else None,
            stab_tol=_number(s["stab_tol"], "synthesis.stab_tol", nonneg=True) if "stab_tol" in s else None,
            rank_tol=_number(s["rank_tol"], "synthesis.rank_tol", nonneg=True) if "rank_tol" in s else None,
        )
    sim = _parse_simulation(data["simulation"], plant) if "simulation" in data else None
    return Scenario(plant=plant, graph=graph, synthesis=synth, simulation=sim)


def load_scenario(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {path}: {exc}") from exc
    return parse_scenario(data)
