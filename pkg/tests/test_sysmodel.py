import copy

import numpy as np
import pytest

import destimate as d
from destimate.errors import ScenarioError
from destimate.randsys import directed_cycle, undirected_path
from destimate.sysmodel import SignalSpec, SignalTerm, zero_signal


def graph(adj):
    return d.CommGraph(adjacency=np.array(adj, dtype=int))


class TestLaplacian:
    def test_one_undirected_edge(self):
        L = d.laplacian(graph([[0, 1], [1, 0]]))
        assert np.array_equal(L, [[1.0, -1.0], [-1.0, 1.0]])

    def test_edgeless(self):
        L = d.laplacian(graph(np.zeros((3, 3))))
        assert np.array_equal(L, np.zeros((3, 3)))

    def test_directed_three_cycle(self):
        # node i receives from its predecessor i-1
        L = d.laplacian(directed_cycle(3))
        assert np.array_equal(L, [[1, 0, -1], [-1, 1, 0], [0, -1, 1]])

    def test_annihilates_ones(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            l = int(rng.integers(1, 8))
            adj = (rng.random((l, l)) < 0.4).astype(int)
            np.fill_diagonal(adj, 0)
            L = d.laplacian(graph(adj))
            assert np.abs(L @ np.ones(l)).max() <= 1e-12

    def test_undirected_laplacian_is_psd(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            l = int(rng.integers(2, 8))
            adj = (rng.random((l, l)) < 0.5).astype(int)
            adj = ((adj + adj.T) > 0).astype(int)
            np.fill_diagonal(adj, 0)
            L = d.laplacian(graph(adj))
            assert np.linalg.eigvalsh(L + L.T).min() >= -1e-10


class TestTopology:
    def test_single_undirected_edge(self):
        rep = d.analyze_topology(graph([[0, 1], [1, 0]]))
        assert rep.is_undirected and rep.is_connected_undirected
        assert rep.satisfies_assumption
        # eigenvalues of L + L' are {0, 4}
        assert rep.lambda2 == 4.0

    def test_directed_three_cycle(self):
        rep = d.analyze_topology(directed_cycle(3))
        assert not rep.is_undirected
        assert rep.is_balanced and rep.is_strongly_connected
        assert rep.satisfies_assumption
        # circulant: eigenvalues 2 - 2 cos(2 pi k / 3), doubled
        assert np.isclose(rep.lambda2, 3.0, atol=1e-12)

    def test_directed_path_rejected(self):
        rep = d.analyze_topology(graph([[0, 0], [1, 0]]))
        assert not rep.is_balanced
        assert not rep.is_strongly_connected
        assert not rep.satisfies_assumption

    def test_single_node(self):
        rep = d.analyze_topology(graph([[0]]))
        assert rep.satisfies_assumption
        assert rep.lambda2 is None

    def test_disconnected_undirected(self):
        rep = d.analyze_topology(graph(np.zeros((3, 3))))
        assert rep.is_undirected and not rep.is_connected_undirected
        assert not rep.satisfies_assumption

    def test_connectivity_checks_agree(self):
        # BFS reachability vs Laplacian spectral gap on random undirected graphs
        rng = np.random.default_rng(8)
        for _ in range(40):
            l = int(rng.integers(2, 9))
            adj = (rng.random((l, l)) < 0.3).astype(int)
            adj = ((adj + adj.T) > 0).astype(int)
            np.fill_diagonal(adj, 0)
            g = graph(adj)
            rep = d.analyze_topology(g)
            L = d.laplacian(g)
            w = np.sort(np.linalg.eigvalsh(L + L.T))
            spectral_connected = bool(w[1] > 1e-9 * l)
            assert rep.is_connected_undirected == spectral_connected


class TestStackedOutput:
    def test_demo_stack(self, demo):
        Ct, Dt = d.stacked_output(demo.plant)
        assert Ct.shape == (2, 6)
        assert Ct[0, 0] == 1.0 and Ct[1, 2] == 1.0
        assert np.count_nonzero(Ct) == 2
        assert np.array_equal(Dt, np.zeros((2, 2)))

    def test_single_sensor(self):
        C = np.array([[1.0, 2.0]])
        p = d.PlantModel(
            A=np.eye(2) * -1,
            B=np.zeros((2, 1)),
            sensors=(d.Sensor(C=C, D=np.zeros((1, 1))),),
            K=np.zeros((1, 2)),
        )
        Ct, _ = d.stacked_output(p)
        assert np.array_equal(Ct, C)

    def test_three_rows_in_order(self):
        rows = [np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), np.array([[1.0, 1.0]])]
        p = d.PlantModel(
            A=-np.eye(2),
            B=np.zeros((2, 1)),
            sensors=tuple(d.Sensor(C=r, D=np.zeros((1, 1))) for r in rows),
            K=np.zeros((1, 2)),
        )
        Ct, _ = d.stacked_output(p)
        assert np.array_equal(Ct, np.vstack(rows))


class TestSignals:
    def test_kinds(self):
        spec = SignalSpec(
            channels=(
                (SignalTerm("constant", amplitude=2.0),),
                (SignalTerm("sin", rate=2.0),),
                (SignalTerm("cos"),),
                (SignalTerm("exp", amplitude=0.5),),
                (SignalTerm("ramp", phase=-1.0),),
                (SignalTerm("step", phase=-1.0),),
            )
        )
        u = spec.evaluate(1.0)
        assert np.allclose(
            u,
            [2.0, np.sin(2.0), np.cos(1.0), 0.5 * np.exp(1.0), 0.0, 1.0],
        )
        # ramp/step turn on when rate*t + phase crosses zero
        u2 = spec.evaluate(3.0)
        assert np.isclose(u2[4], 2.0) and u2[5] == 1.0

    def test_zero_signal(self):
        assert np.array_equal(zero_signal(3).evaluate(2.0), np.zeros(3))

    def test_grid_matches_pointwise(self):
        spec = SignalSpec(channels=((SignalTerm("exp"), SignalTerm("sin", amplitude=-1.0)),))
        ts = np.linspace(0, 2, 17)
        grid = spec.evaluate_grid(ts)
        point = np.stack([spec.evaluate(t) for t in ts])
        assert np.allclose(grid, point)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ScenarioError):
            SignalTerm("square")


class TestScenarioParsing:
    def test_demo_round_trip(self, demo_dict, demo):
        assert demo.plant.n == 6
        assert demo.plant.l == 2
        assert demo.plant.m == 2
        assert demo.plant.r == 1
        assert demo.graph.l == 2
        assert demo.simulation.t_end == 3.0
        assert demo.simulation.input.m == 2
        assert np.array_equal(demo.simulation.x0, [1, 2, 1, 2, 3, 0])

    def test_unknown_top_level_key(self, demo_dict):
        data = copy.deepcopy(demo_dict)
        data["extra"] = {}
        with pytest.raises(ScenarioError, match="unknown keys"):
            d.parse_scenario(data)

    def test_unknown_nested_key(self, demo_dict):
        data = copy.deepcopy(demo_dict)
        data["plant"]["Q"] = [[1.0]]
        with pytest.raises(ScenarioError, match="unknown keys"):
            d.parse_scenario(data)

    def test_empty_sensor_list(self, demo_dict):
        data = copy.deepcopy(demo_dict)
        data["plant"]["sensors"] = []
        with pytest.raises(ScenarioError, match="non-empty"):
            d.parse_scenario(data)

    def test_weighted_graph_rejected(self, demo_dict):
        data = copy.deepcopy(demo_dict)
        data["graph"]["adjacency"] = [[0, 0.5], [0.5, 0]]
        with pytest.raises(ScenarioError, match="weighted"):
            d.parse_scenario(data)

    def test_nonfinite_entries_rejected(self, demo_dict):
        data = copy.deepcopy(demo_dict)
        data["plant"]["A"][0][0] = float("nan")
        with pytest.raises(ScenarioError, match="non-finite"):
            d.parse_scenario(data)

    def test_graph_size_mismatch(self, demo_dict):
        data = copy.deepcopy(demo_dict)
        data["graph"]["adjacency"] = [[0]]
        with pytest.raises(ScenarioError, match="sensors"):
            d.parse_scenario(data)

    def test_w0_count_mismatch(self, demo_dict):
        data = copy.deepcopy(demo_dict)
        data["simulation"]["w0"] = [[1.0] * 5]
        with pytest.raises(ScenarioError, match="w0"):
            d.parse_scenario(data)

    def test_input_channel_mismatch(self, demo_dict):
        data = copy.deepcopy(demo_dict)
        data["simulation"]["input"] = [[]]
        with pytest.raises(ScenarioError, match="channels"):
            d.parse_scenario(data)

    def test_missing_sections_default(self, demo_dict):
        data = {"plant": copy.deepcopy(demo_dict["plant"]),
                "graph": copy.deepcopy(demo_dict["graph"])}
        sc = d.parse_scenario(data)
        assert sc.simulation is None
        assert sc.synthesis.gamma is None


class TestGraphHelpers:
    def test_path_graph_is_connected(self):
        rep = d.analyze_topology(undirected_path(4))
        assert rep.satisfies_assumption and rep.is_undirected

    def test_plant_validation(self):
        with pytest.raises(Exception):
            d.PlantModel(
                A=np.zeros((2, 3)),
                B=np.zeros((2, 1)),
                sensors=(d.Sensor(C=np.zeros((1, 2)), D=np.zeros((1, 1))),),
                K=np.zeros((1, 2)),
            )
