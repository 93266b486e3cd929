"""Seeded generators for structured random test systems.

Systems are built block-wise with a known observability decomposition
(observable / stable-unobservable / unstable-unobservable sizes and a
functional that does or does not touch the unstable unobservable block),
then rotated by a random orthogonal change of coordinates.  Used by the
property suites; blocks are kept well conditioned so rank and stability
decisions are far from their tolerances.
"""

from __future__ import annotations

import numpy as np

from .sysmodel import CommGraph, PlantModel, Sensor


def random_orthogonal(rng, n):
    if n == 0:
        return np.eye(0)
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def _tril_block(rng, k, re_lo, re_hi, coupling=0.4):
    """Lower-triangular block with eigenvalues (its diagonal) in [re_lo, re_hi]."""
    if k == 0:
        return np.zeros((0, 0))
    d = rng.uniform(re_lo, re_hi, size=k)
    M = np.tril(coupling * rng.standard_normal((k, k)), -1)
    return M + np.diag(d)


def _observable_pair(rng, n1, p, min_sv=1e-3, tries=50):
    for _ in range(tries):
        A = rng.standard_normal((n1, n1))
        C = rng.standard_normal((p, n1))
        rows = [C]
        M = C
        for _ in range(n1 - 1):
            M = M @ A
            rows.append(M)
        s = np.linalg.svd(np.vstack(rows), compute_uv=False)
        if s.size and s[-1] > min_sv * s[0]:
            return A, C
    raise RuntimeError("failed to draw a well-conditioned observable pair")


def structured_system(
    rng,
    n1,
    n2,
    n3,
    p=1,
    r=1,
    detectable=True,
    stable_range=(-3.0, -0.8),
    unstable_range=(0.1, 1.0),
):
    """(A, C, K) with known block sizes; K hits the unstable unobservable
    block iff ``detectable`` is False (requires n3 >= 1 in that case)."""
    if not detectable and n3 == 0:
        raise ValueError("a non-detectable system needs n3 >= 1")
    n = n1 + n2 + n3
    A_o1, C_o1 = _observable_pair(rng, n1, p)
    A = np.zeros((n, n))
    A[:n1, :n1] = A_o1
    A[n1 : n1 + n2, n1 : n1 + n2] = _tril_block(rng, n2, *stable_range)
    A[n1 + n2 :, n1 + n2 :] = _tril_block(rng, n3, *unstable_range)
    A[n1:, :n1] = 0.5 * rng.standard_normal((n2 + n3, n1))
    A[n1 + n2 :, n1 : n1 + n2] = 0.5 * rng.standard_normal((n3, n2))
    C = np.hstack([C_o1, np.zeros((p, n2 + n3))])
    K = np.hstack(
        [
            rng.standard_normal((r, n1)),
            rng.standard_normal((r, n2)),
            np.zeros((r, n3))
            if detectable
            else rng.uniform(0.5, 1.5, size=(r, n3)) * rng.choice([-1.0, 1.0], size=(r, n3)),
        ]
    )
    P0 = random_orthogonal(rng, n)
    return P0 @ A @ P0.T, C @ P0.T, K @ P0.T


def random_plant(
    rng,
    l,
    n1,
    n2,
    n3,
    m=1,
    r=1,
    detectable=True,
    stable_range=(-3.0, -0.8),
    unstable_range=(0.1, 0.5),
):
    """A PlantModel whose stacked sensors realize the structured system.

    Each node gets one output row; D = 0 keeps the demo-style feedthrough.
    """
    A, C, K = structured_system(
        rng, n1, n2, n3, p=l, r=r, detectable=detectable,
        stable_range=stable_range, unstable_range=unstable_range,
    )
    n = A.shape[0]
    B = 0.5 * rng.standard_normal((n, m))
    sensors = tuple(
        Sensor(C=C[i : i + 1], D=np.zeros((1, m))) for i in range(l)
    )
    return PlantModel(A=A, B=B, sensors=sensors, K=K)


def complete_graph(l):
    adj = np.ones((l, l), dtype=int) - np.eye(l, dtype=int)
    return CommGraph(adjacency=adj)


def undirected_path(l):
    adj = np.zeros((l, l), dtype=int)
    for i in range(l - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1
    return CommGraph(adjacency=adj)


def directed_cycle(l):
    """Node i receives from its predecessor: balanced and strongly connected."""
    adj = np.zeros((l, l), dtype=int)
    for i in range(l):
        adj[i, (i - 1) % l] = 1
    return CommGraph(adjacency=adj)
