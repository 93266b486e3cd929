"""Bundled demonstration system and its reference quantities.

A six-state plant with one unstable mode that is invisible to both
sensors but absent from the functional, so neither sensor alone suffices
while the pair jointly does.  The reference design for this system pins a
handful of quantities (spectrum, rank witnesses, consensus eigenvalue,
one admissible coupling gain); matrices such as T or the injection gains
are basis- and method-dependent, so only algebraic identities are
comparable for them, not entries.

The reference initial state lists five entries for the six-state plant;
the demo pins the remaining coordinate to zero and reports that choice.
The simulation horizon is set to 3 s: long enough for the error to fall
roughly ten orders of magnitude, short enough that the plant's e^{3t}
growth (driven by the exp(t) input channel) does not push the
floating-point error floor above the thresholds checked downstream.
"""

from __future__ import annotations

import copy

DEMO_SCENARIO = {
    "plant": {
        "A": [
            [-1, 0, 0, 1, 0, 0],
            [0, 3, 1, 1, 1, 0],
            [0, 0, 2, 0, 1, 0],
            [0, 0, 0, 3, 0, 0],
            [0, 0, 0, 0, -2, 1],
            [0, 0, 0, 0, 3, -2],
        ],
        "B": [[0, 0], [0, 0], [0, 0], [2, 1], [1, 0], [4, 1]],
        "K": [[0, 0, 1, 2, 1, 0]],
        "sensors": [
            {"C": [[1, 0, 0, 0, 0, 0]], "D": [[0, 0]]},
            {"C": [[0, 0, 1, 0, 0, 0]], "D": [[0, 0]]},
        ],
    },
    "graph": {"adjacency": [[0, 1], [1, 0]]},
    "synthesis": {},
    "simulation": {
        "t_end": 3.0,
        "dt": 1e-3,
        "x0": [1, 2, 1, 2, 3, 0],
        "w0": [[2, 4, 4, 6, 5], [4, 4, 6, 8, 4]],
        "input": [
            [{"kind": "exp", "amplitude": 1.0, "rate": 1.0, "phase": 0.0}],
            [{"kind": "sin", "amplitude": 1.0, "rate": 1.0, "phase": 0.0}],
        ],
    },
}

#: Independently known quantities for the demo system, used by the demo
#: command's comparison table and by the verification suite.
DEMO_REFERENCE = {
    # distinct eigenvalues (3 has algebraic multiplicity 2)
    "spectrum": [3.0, 2.0, -0.2679, -3.7321, -1.0],
    "spectrum_tol": 1e-3,
    "lambda2": 4.0,
    "estimator_order": 5,
    "coupling_gain": 66.0,
    "sensor_witnesses": [
        {"sensor": 1, "lambda": 2.0, "rank_with_functional": 6, "rank_without": 5},
        {"sensor": 2, "lambda": 3.0, "rank_with_functional": 5, "rank_without": 4},
    ],
    "reference_Lambda2": -0.0994,  # instance-specific; only the sign carries over
}


def demo_scenario():
    """A fresh copy of the bundled scenario dict (JSON-ready)."""
    return copy.deepcopy(DEMO_SCENARIO)
