import numpy as np
import pytest

import destimate as d
from destimate import matnum
from destimate.errors import (
    DetectabilityError,
    SynthesisFailure,
    TopologyError,
)
from destimate.randsys import complete_graph, random_plant
from destimate.synth import estimator_from_dict, estimator_to_dict

IDENT_TOL = 1e-8


def identity_residuals(plant, est):
    A, B, K, T = plant.A, plant.B, plant.K, est.T
    out = []
    for nd, s in zip(est.nodes, plant.sensors):
        out.append(np.linalg.norm(nd.N @ T + nd.L @ s.C - T @ A))
        out.append(np.linalg.norm(nd.H + nd.L @ s.D - T @ B))
        out.append(np.linalg.norm(nd.R - K @ T.T))
    out.append(np.linalg.norm(K @ T.T @ T - K))
    out.append(np.linalg.norm(T @ T.T - np.eye(est.q)))
    return np.array(out)


class TestCentralized:
    def test_two_state_hand_case(self):
        A = np.diag([1.0, -1.0])
        B = np.array([[1.0], [0.0]])
        C = np.array([[1.0, 0.0]])
        D = np.zeros((1, 1))
        K = np.array([[1.0, 0.0]])
        est = d.synth_centralized(A, B, C, D, K)
        assert est.q == 2
        assert matnum.spectral_abscissa(est.N) < 0
        scale = max(np.linalg.norm(A), 1.0)
        assert np.linalg.norm(est.N @ est.T + est.L @ C - est.T @ A) <= IDENT_TOL * scale
        assert np.allclose(est.H, est.T @ B - est.L @ D)
        assert np.allclose(est.R, K @ est.T.T)

    def test_zero_functional(self):
        A = np.diag([1.0, -1.0])
        est = d.synth_centralized(
            A, np.zeros((2, 1)), np.array([[1.0, 0.0]]), np.zeros((1, 1)), np.zeros((1, 2))
        )
        assert np.array_equal(est.R, np.zeros((1, est.q)))

    def test_stable_plant_no_outputs(self):
        # degenerate: open-loop simulator of the stable dynamics
        A = np.array([[-1.0, 1.0], [0.0, -2.0]])
        est = d.synth_centralized(
            A, np.eye(2), np.zeros((0, 2)), np.zeros((0, 2)), np.array([[1.0, 1.0]])
        )
        assert est.q == 2
        assert est.L.shape == (2, 0)
        got = np.sort(np.linalg.eigvals(est.N).real)
        assert np.allclose(got, [-2.0, -1.0], atol=1e-9)

    def test_refusal_carries_witnesses(self):
        A = np.diag([1.0, -1.0])
        with pytest.raises(DetectabilityError) as err:
            d.synth_centralized(
                A, np.zeros((2, 1)), np.array([[0.0, 1.0]]), np.zeros((1, 1)),
                np.array([[1.0, 0.0]]),
            )
        assert err.value.witnesses
        assert any(np.isclose(w.lam, 1.0) for w in err.value.witnesses)


class TestDistributed:
    def test_demo_identities(self, demo, demo_design):
        est, report = demo_design
        scale = max(
            np.linalg.norm(demo.plant.A), np.linalg.norm(demo.plant.K), 1.0
        )
        assert identity_residuals(demo.plant, est).max() <= IDENT_TOL * scale
        assert est.q == 5
        assert (report.n1, report.n2, report.n3) == (5, 0, 1)

    def test_sum_of_node_matrices(self, demo, demo_design):
        # sum N_i equals l * Nbar to machine precision
        est, report = demo_design
        got = sum(nd.N for nd in est.nodes)
        assert np.allclose(got, demo.plant.l * report.Nbar, atol=1e-10)
        assert matnum.spectral_abscissa(got) < 0

    def test_lyapunov_certificate(self, demo_design):
        est, report = demo_design
        G = report.Nbar.T @ report.Pbar + report.Pbar @ report.Nbar
        w = np.linalg.eigvalsh(G)
        assert w.max() < 0
        assert np.isclose(w.max(), report.Lambda2)
        assert matnum.is_positive_definite(report.Pbar)

    def test_gamma_bound_structure(self, demo_design):
        est, report = demo_design
        assert report.Lambda2 < 0
        assert report.Lambda3 >= 0
        # -Lambda3 / Lambda2 >= 0 makes the bound at least Lambda1 / lambda2
        assert report.gamma_bound >= report.Lambda1 / report.lambda2 - 1e-12
        assert report.gamma_used > report.gamma_bound
        assert report.Lambda1 <= np.sqrt(report.Lambda3) + 1e-9

    def test_closed_loop_certificate(self, demo, demo_design):
        est, _ = demo_design
        assert d.coupled_error_abscissa(est, demo.graph) < 0

    def test_reference_gain_still_stabilizes(self, demo):
        est, report = d.synth_distributed(demo.plant, demo.graph, gamma=66.0)
        assert report.gamma_used == 66.0
        assert d.coupled_error_abscissa(est, demo.graph) < 0

    def test_small_gamma_override_refused(self, demo):
        # far below the bound the coupled dynamics stay unstable
        with pytest.raises(SynthesisFailure, match="abscissa"):
            d.synth_distributed(demo.plant, demo.graph, gamma=0.001)

    def test_topology_refusal(self, demo):
        bad = d.CommGraph(adjacency=np.array([[0, 0], [1, 0]]))
        with pytest.raises(TopologyError):
            d.synth_distributed(demo.plant, bad)

    def test_detectability_refusal_names_witness(self, demo):
        solo = d.PlantModel(
            A=demo.plant.A,
            B=demo.plant.B,
            sensors=(demo.plant.sensors[0],),
            K=demo.plant.K,
        )
        g1 = d.CommGraph(adjacency=np.zeros((1, 1), dtype=int))
        with pytest.raises(DetectabilityError) as err:
            d.synth_distributed(solo, g1)
        assert any(np.isclose(w.lam, 2.0) for w in err.value.witnesses)

    def test_lambda1_estimate_flag(self, demo, demo_design):
        _, exact = demo_design
        est2, loose = d.synth_distributed(demo.plant, demo.graph, use_lambda1_estimate=True)
        assert np.isclose(loose.Lambda1, np.sqrt(loose.Lambda3))
        assert loose.Lambda1 >= exact.Lambda1 - 1e-9
        assert d.coupled_error_abscissa(est2, demo.graph) < 0

    def test_empty_functional(self, demo):
        plant = d.PlantModel(
            A=demo.plant.A, B=demo.plant.B, sensors=demo.plant.sensors,
            K=np.zeros((0, 6)),
        )
        est, _ = d.synth_distributed(plant, demo.graph)
        assert est.nodes[0].R.shape == (0, est.q)

    def test_random_plants(self):
        rng = np.random.default_rng(61)
        for _ in range(5):
            plant = random_plant(rng, l=3, n1=3, n2=1, n3=1)
            graph = complete_graph(3)
            est, report = d.synth_distributed(plant, graph)
            assert d.coupled_error_abscissa(est, graph) < 0
            scale = max(np.linalg.norm(plant.A), np.linalg.norm(plant.K), 1.0)
            assert identity_residuals(plant, est).max() <= IDENT_TOL * scale


class TestSingleNode:
    def test_matches_centralized_exactly(self, demo, demo_stacked):
        C, D = demo_stacked
        plant = d.PlantModel(
            A=demo.plant.A, B=demo.plant.B,
            sensors=(d.Sensor(C=C, D=D),), K=demo.plant.K,
        )
        g1 = d.CommGraph(adjacency=np.zeros((1, 1), dtype=int))
        dist, report = d.synth_distributed(plant, g1)
        cen = d.synth_centralized(demo.plant.A, demo.plant.B, C, D, demo.plant.K)
        assert np.array_equal(dist.T, cen.T)
        assert np.array_equal(dist.nodes[0].N, cen.N)
        assert np.array_equal(dist.nodes[0].H, cen.H)
        assert np.array_equal(dist.nodes[0].L, cen.L)
        assert np.array_equal(dist.nodes[0].R, cen.R)
        assert dist.gamma == 0.0
        assert report.lambda2 is None and report.gamma_bound is None


class TestVerify:
    def test_clean_design_passes(self, demo, demo_design):
        est, _ = demo_design
        audit = d.verify_estimator(demo.plant, demo.graph, est)
        assert audit.passed
        ident = [v for k, v in audit.residuals.items() if "abscissa" not in k]
        assert max(ident) <= IDENT_TOL

    def test_tampered_gain_is_flagged(self, demo, demo_design):
        est, _ = demo_design
        bad_L = est.nodes[0].L.copy()
        bad_L[1, 0] += 1.0
        nodes = (d.NodeEstimator(
            N=est.nodes[0].N, H=est.nodes[0].H, L=bad_L,
            M=est.nodes[0].M, R=est.nodes[0].R,
        ),) + est.nodes[1:]
        tampered = d.DistributedEstimator(T=est.T, nodes=nodes, gamma=est.gamma)
        audit = d.verify_estimator(demo.plant, demo.graph, tampered)
        assert not audit.passed
        assert audit.residuals["N1T+L1C1-TA"] > IDENT_TOL

    def test_zero_gamma_unstable_block_flagged(self, demo, demo_design):
        # the demo node matrices are individually unstable, so removing the
        # coupling must fail the global stability check
        est, _ = demo_design
        uncoupled = d.DistributedEstimator(T=est.T, nodes=est.nodes, gamma=0.0)
        audit = d.verify_estimator(demo.plant, demo.graph, uncoupled)
        assert not audit.passed
        assert not audit.checks["coupled_stable"]
        assert audit.checks["identities"]


class TestEstimatorFile:
    def test_round_trip_exact(self, demo_design, tmp_path):
        est, report = demo_design
        path = tmp_path / "est.json"
        d.save_estimator(path, est, report)
        back = d.load_estimator(path)
        assert np.array_equal(back.T, est.T)
        assert back.gamma == est.gamma
        for a, b in zip(back.nodes, est.nodes):
            for name in ("N", "H", "L", "M", "R"):
                assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_dict_round_trip(self, demo_design):
        est, report = demo_design
        back = estimator_from_dict(estimator_to_dict(est, report))
        assert np.array_equal(back.nodes[1].M, est.nodes[1].M)

    def test_unknown_key_rejected(self, demo_design):
        est, report = demo_design
        data = estimator_to_dict(est, report)
        data["surprise"] = 1
        with pytest.raises(d.ScenarioError):
            estimator_from_dict(data)
