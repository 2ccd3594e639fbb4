"""Tests for HMM topology, likelihoods, decoding, training, and sampling."""

import math

import numpy as np
import pytest

from signhmm.emissions import GaussianEmission, GmmEmission
from signhmm.hmm import (
    HmmModel,
    TopologyKind,
    build_topology,
    init_model,
    log_forward,
    sample,
    score_sequence,
    viterbi_decode,
    viterbi_train,
)

from oracles import brute_force_scores, oracle_path_log_joint, random_model


def _single_state_model(mean=0.0, var=1.0):
    topo = build_topology("ergodic", 1)
    return HmmModel(topo, np.array([1.0]), np.array([[1.0]]),
                    (GaussianEmission([mean], [var]),), 1)


class TestBuildTopology:
    def test_ergodic_mask_is_all_true(self):
        topo = build_topology("ergodic", 3)
        assert topo.mask.all() and topo.mask.shape == (3, 3)

    def test_left_to_right_mask(self):
        topo = build_topology("left-to-right", 3)
        expected = np.array(
            [[True, True, False], [False, True, True], [False, False, True]]
        )
        np.testing.assert_array_equal(topo.mask, expected)

    def test_single_state_ergodic(self):
        topo = build_topology("ergodic", 1)
        np.testing.assert_array_equal(topo.mask, [[True]])

    def test_last_ltr_state_self_loops(self):
        topo = build_topology("left-to-right", 5)
        assert topo.mask[4, 4]
        assert topo.mask.any(axis=1).all()

    def test_zero_states_rejected(self):
        with pytest.raises(ValueError, match="n_states"):
            build_topology("ergodic", 0)


class TestInitModel:
    def test_uniform_segmentation_two_states(self):
        frames = np.array([[0.0], [1.0], [10.0], [11.0]])
        model = init_model([frames], build_topology("ergodic", 2), "gaussian")
        assert model.emissions[0].mean[0] == pytest.approx(0.5)
        assert model.emissions[1].mean[0] == pytest.approx(10.5)

    def test_ltr_pi_forced(self):
        frames = np.random.default_rng(0).normal(size=(12, 2))
        model = init_model([frames], build_topology("left-to-right", 3))
        np.testing.assert_array_equal(model.pi, [1.0, 0.0, 0.0])

    def test_segment_means_match_independent_oracle(self):
        # 10 sequences from a known 2-state source: 15 frames at mean 0,
        # then 15 at mean 5 (unit variance). Expected segment means were
        # computed with a standalone script over the same draws.
        rng = np.random.default_rng(555)
        seqs = []
        for _ in range(10):
            low = rng.normal(0.0, 1.0, size=(15, 1))
            high = rng.normal(5.0, 1.0, size=(15, 1))
            seqs.append(np.concatenate([low, high]))
        model = init_model(seqs, build_topology("ergodic", 2))
        means = [e.mean[0] for e in model.emissions]
        np.testing.assert_allclose(
            means, [-0.17612975014761365, 4.986619875530042], rtol=1e-12
        )
        assert abs(means[0] - 0.0) < 1.0 and abs(means[1] - 5.0) < 1.0

    def test_ergodic_init_transitions_uniform(self):
        frames = np.random.default_rng(1).normal(size=(20, 1))
        model = init_model([frames], build_topology("ergodic", 4))
        np.testing.assert_allclose(model.A, np.full((4, 4), 0.25))
        np.testing.assert_allclose(model.pi, np.full(4, 0.25))

    def test_ltr_init_transitions_from_segments(self):
        frames = np.random.default_rng(2).normal(size=(30, 1))
        model = init_model([frames], build_topology("left-to-right", 3))
        # 9 self-loops then one advance per segment boundary, add-one smoothed
        np.testing.assert_allclose(model.A[0], [10.0 / 12.0, 2.0 / 12.0, 0.0])
        assert model.A[2, 2] == 1.0

    def test_empty_sequence_list_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            init_model([], build_topology("ergodic", 2))

    def test_dim_mismatch_rejected(self):
        a = np.zeros((4, 2))
        b = np.zeros((4, 3))
        with pytest.raises(ValueError, match="disagree"):
            init_model([a, b], build_topology("ergodic", 2))

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        seqs = [rng.normal(size=(25, 3)) for _ in range(4)]
        m1 = init_model(seqs, build_topology("ergodic", 3), "gmm", n_mixtures=2, seed=7)
        m2 = init_model(seqs, build_topology("ergodic", 3), "gmm", n_mixtures=2, seed=7)
        np.testing.assert_array_equal(m1.A, m2.A)
        for e1, e2 in zip(m1.emissions, m2.emissions):
            np.testing.assert_array_equal(e1.weights, e2.weights)
            for c1, c2 in zip(e1.components, e2.components):
                np.testing.assert_array_equal(c1.mean, c2.mean)

    def test_gmm_init_with_fewer_frames_than_mixtures(self):
        # T=2, N=2 leaves one frame per state, below K=3
        frames = np.array([[0.0], [5.0]])
        model = init_model([frames], build_topology("ergodic", 2), "gmm", n_mixtures=3)
        for e in model.emissions:
            assert e.n_components == 3
        model.validate()


class TestLogForward:
    def test_single_state_standard_normal(self):
        model = _single_state_model()
        value = log_forward(model, np.array([[0.0], [0.0]]))
        assert value == pytest.approx(-math.log(2 * math.pi), abs=1e-9)

    def test_ltr_length_one_uses_state_zero(self):
        topo = build_topology("left-to-right", 3)
        emissions = tuple(GaussianEmission([float(5 * k)], [1.0]) for k in range(3))
        a = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]])
        model = HmmModel(topo, np.array([1.0, 0.0, 0.0]), a, emissions, 1)
        x = np.array([[0.3]])
        assert log_forward(model, x) == pytest.approx(
            float(emissions[0].log_density(x[0])), abs=1e-12
        )

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(101)
        for trial in range(15):
            kind = TopologyKind.ERGODIC if trial % 2 == 0 else TopologyKind.LEFT_TO_RIGHT
            emission = "gaussian" if trial % 3 else "gmm"
            n = int(rng.integers(1, 4))
            t_len = int(rng.integers(1, 6))
            dim = int(rng.integers(1, 3))
            model = random_model(rng, n, dim, kind=kind, emission=emission)
            frames = rng.normal(0, 3, size=(t_len, dim))
            total, _, _ = brute_force_scores(model, frames)
            assert log_forward(model, frames) == pytest.approx(total, abs=1e-8)

    def test_dimension_mismatch(self):
        model = _single_state_model()
        with pytest.raises(ValueError, match="dim"):
            log_forward(model, np.zeros((3, 2)))


class TestViterbiDecode:
    def test_single_state_path(self):
        model = _single_state_model()
        result = viterbi_decode(model, np.zeros((6, 1)))
        np.testing.assert_array_equal(result.path, np.zeros(6, dtype=int))
        assert not result.degenerate

    def test_emissions_dominate(self):
        topo = build_topology("ergodic", 2)
        model = HmmModel(
            topo,
            np.array([0.5, 0.5]),
            np.full((2, 2), 0.5),
            (GaussianEmission([0.0], [0.01]), GaussianEmission([10.0], [0.01])),
            1,
        )
        result = viterbi_decode(model, np.array([[0.0], [10.0], [0.0]]))
        np.testing.assert_array_equal(result.path, [0, 1, 0])

    def test_matches_brute_force_max(self):
        rng = np.random.default_rng(202)
        for trial in range(15):
            kind = TopologyKind.LEFT_TO_RIGHT if trial % 2 else TopologyKind.ERGODIC
            n = int(rng.integers(1, 4))
            t_len = int(rng.integers(1, 6))
            model = random_model(rng, n, 1, kind=kind)
            frames = rng.normal(0, 3, size=(t_len, 1))
            _, best, _ = brute_force_scores(model, frames)
            result = viterbi_decode(model, frames)
            assert result.log_joint == pytest.approx(best, abs=1e-8)
            # the returned path must itself attain the maximum
            attained = oracle_path_log_joint(model, frames, result.path)
            assert attained == pytest.approx(best, abs=1e-8)

    def test_log_joint_never_exceeds_forward(self):
        rng = np.random.default_rng(303)
        for _ in range(50):
            n = int(rng.integers(1, 5))
            model = random_model(rng, n, 2)
            frames = rng.normal(0, 2, size=(int(rng.integers(1, 8)), 2))
            assert viterbi_decode(model, frames).log_joint <= log_forward(model, frames) + 1e-9

    def test_ltr_paths_non_decreasing_unit_steps(self):
        rng = np.random.default_rng(404)
        for _ in range(20):
            model = random_model(rng, 4, 1, kind=TopologyKind.LEFT_TO_RIGHT)
            frames = rng.normal(0, 3, size=(10, 1))
            path = viterbi_decode(model, frames).path
            steps = np.diff(path)
            assert np.all(steps >= 0) and np.all(steps <= 1)

    def test_degenerate_model_flagged(self):
        # hand-built broken model: no outgoing probability from state 0
        topo = build_topology("ergodic", 2)
        model = HmmModel(
            topo,
            np.array([1.0, 0.0]),
            np.array([[0.0, 0.0], [0.0, 1.0]]),
            (GaussianEmission([0.0], [1.0]), GaussianEmission([0.0], [1.0])),
            1,
        )
        result = viterbi_decode(model, np.zeros((3, 1)))
        assert result.degenerate
        assert result.log_joint == -np.inf
        assert np.all(topo.mask[result.path[:-1], result.path[1:]])

    def test_tie_breaks_toward_lower_state(self):
        topo = build_topology("ergodic", 2)
        g = GaussianEmission([0.0], [1.0])
        model = HmmModel(topo, np.array([0.5, 0.5]), np.full((2, 2), 0.5), (g, g), 1)
        result = viterbi_decode(model, np.zeros((4, 1)))
        np.testing.assert_array_equal(result.path, np.zeros(4, dtype=int))


class TestViterbiTrain:
    def test_fixed_point_converges_after_one_extra_iteration(self):
        rng = np.random.default_rng(11)
        seqs = [rng.normal(size=(10, 1)) for _ in range(3)]
        # single-state init is the exact MLE, hence a hard-EM fixed point
        model = init_model(seqs, build_topology("ergodic", 1))
        trained, report = viterbi_train(model, seqs, max_iters=20, rel_tol=1e-8)
        assert report.converged
        assert report.iterations == 2
        assert report.objective_trace[0] == pytest.approx(report.objective_trace[1], abs=1e-9)
        np.testing.assert_allclose(trained.emissions[0].mean, model.emissions[0].mean)

    def test_two_state_parameter_recovery(self):
        topo = build_topology("ergodic", 2)
        gen = HmmModel(
            topo,
            np.array([0.5, 0.5]),
            np.array([[0.9, 0.1], [0.1, 0.9]]),
            (GaussianEmission([0.0], [1.0]), GaussianEmission([5.0], [1.0])),
            1,
        )
        seqs = [sample(gen, 30, seed=1000 + i).frames for i in range(50)]
        model = init_model(seqs, topo, seed=0)
        trained, report = viterbi_train(model, seqs)
        order = np.argsort([e.mean[0] for e in trained.emissions])
        means = [trained.emissions[i].mean[0] for i in order]
        np.testing.assert_allclose(
            means, [-0.017552391423424577, 5.066704822016282], rtol=1e-10
        )
        assert abs(means[0] - 0.0) < 0.3 and abs(means[1] - 5.0) < 0.3
        assert abs(trained.A[order[0], order[0]] - 0.9) < 0.1
        assert abs(trained.A[order[1], order[1]] - 0.9) < 0.1
        assert report.converged

    def test_max_iters_one_does_single_pass(self):
        rng = np.random.default_rng(13)
        seqs = [rng.normal(size=(8, 1)) for _ in range(2)]
        model = init_model(seqs, build_topology("ergodic", 2))
        _, report = viterbi_train(model, seqs, max_iters=1)
        assert report.iterations == 1
        assert len(report.objective_trace) == 1
        assert not report.converged

    def test_objective_non_decreasing(self):
        rng = np.random.default_rng(17)
        for run in range(6):
            n = int(rng.integers(2, 5))
            gen = random_model(rng, n, 2)
            seqs = [sample(gen, int(rng.integers(5, 20)), seed=run * 100 + i).frames for i in range(10)]
            model = init_model(seqs, build_topology("ergodic", n), seed=run)
            _, report = viterbi_train(model, seqs, max_iters=30)
            diffs = np.diff(report.objective_trace)
            assert np.all(diffs >= -1e-6), f"run {run}: {diffs.min()}"

    def test_empty_state_keeps_emission_and_is_flagged(self):
        topo = build_topology("ergodic", 2)
        far = GaussianEmission([1000.0], [1.0])
        model = HmmModel(
            topo, np.array([0.5, 0.5]), np.full((2, 2), 0.5),
            (GaussianEmission([0.0], [1.0]), far), 1,
        )
        rng = np.random.default_rng(19)
        seqs = [rng.normal(0, 1, size=(10, 1)) for _ in range(3)]
        trained, report = viterbi_train(model, seqs, max_iters=3)
        assert 1 in report.empty_states
        assert trained.emissions[1].mean[0] == 1000.0

    def test_row_stochastic_and_masked_after_training(self):
        rng = np.random.default_rng(23)
        seqs = [rng.normal(size=(15, 2)) for _ in range(5)]
        for kind in ("ergodic", "left-to-right"):
            topo = build_topology(kind, 3)
            model = init_model(seqs, topo)
            trained, _ = viterbi_train(model, seqs, max_iters=5)
            np.testing.assert_allclose(trained.A.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(trained.A[~topo.mask] == 0.0)
            if kind == "left-to-right":
                np.testing.assert_array_equal(trained.pi, [1.0, 0.0, 0.0])

    def test_deterministic(self):
        rng = np.random.default_rng(29)
        seqs = [rng.normal(size=(12, 2)) + k for k, _ in enumerate(range(4))]
        model = init_model(seqs, build_topology("ergodic", 2), "gmm", n_mixtures=2, seed=3)
        t1, r1 = viterbi_train(model, seqs, max_iters=10)
        t2, r2 = viterbi_train(model, seqs, max_iters=10)
        assert r1.objective_trace == r2.objective_trace
        np.testing.assert_array_equal(t1.A, t2.A)

    def test_bad_arguments(self):
        model = _single_state_model()
        with pytest.raises(ValueError, match="max_iters"):
            viterbi_train(model, [np.zeros((2, 1))], max_iters=0)
        with pytest.raises(ValueError, match="rel_tol"):
            viterbi_train(model, [np.zeros((2, 1))], rel_tol=0.0)
        with pytest.raises(ValueError, match="at least one"):
            viterbi_train(model, [])


class TestSample:
    def test_floored_variance_stays_near_mean(self):
        model = _single_state_model(0.0, 1e-12)  # floored to 1e-3
        seq = sample(model, 20, seed=3)
        assert np.all(np.abs(seq.frames) < 3 * math.sqrt(1e-3))

    def test_ltr_first_frame_from_state_zero(self):
        topo = build_topology("left-to-right", 3)
        emissions = tuple(GaussianEmission([float(100 * k)], [1e-3]) for k in range(3))
        a = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]])
        model = HmmModel(topo, np.array([1.0, 0.0, 0.0]), a, emissions, 1)
        seq = sample(model, 1, seed=0)
        assert abs(seq.frames[0, 0]) < 1.0

    def test_law_of_large_numbers(self):
        model = _single_state_model(2.0, 1.0)
        seq = sample(model, 10_000, seed=42)
        assert abs(seq.frames.mean() - 2.0) < 0.05

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(31)
        model = random_model(rng, 3, 2, emission="gmm")
        a = sample(model, 50, seed=9)
        b = sample(model, 50, seed=9)
        np.testing.assert_array_equal(a.frames, b.frames)

    def test_invalid_length(self):
        with pytest.raises(ValueError, match="length"):
            sample(_single_state_model(), 0, seed=0)


class TestSerialization:
    def test_round_trip_gaussian_model(self):
        rng = np.random.default_rng(37)
        model = random_model(rng, 3, 2)
        back = HmmModel.from_dict(model.to_dict())
        np.testing.assert_array_equal(back.pi, model.pi)
        np.testing.assert_array_equal(back.A, model.A)
        assert back.topology.kind == model.topology.kind
        for e1, e2 in zip(back.emissions, model.emissions):
            np.testing.assert_array_equal(e1.mean, e2.mean)
            np.testing.assert_array_equal(e1.var, e2.var)

    def test_round_trip_gmm_model_preserves_scores(self):
        rng = np.random.default_rng(41)
        model = random_model(rng, 2, 2, emission="gmm")
        frames = rng.normal(size=(6, 2))
        back = HmmModel.from_dict(model.to_dict())
        assert log_forward(back, frames) == log_forward(model, frames)

    def test_json_dict_fields(self):
        model = _single_state_model()
        d = model.to_dict()
        assert set(d) == {"kind", "n_states", "feature_dim", "pi", "A", "emissions"}
        assert d["kind"] == "ergodic"

    def test_validate_rejects_bad_rows(self):
        topo = build_topology("ergodic", 2)
        g = GaussianEmission([0.0], [1.0])
        bad = HmmModel(topo, np.array([0.5, 0.5]), np.array([[0.6, 0.6], [0.5, 0.5]]), (g, g), 1)
        with pytest.raises(ValueError, match="sum to 1"):
            bad.validate()

    def test_validate_rejects_masked_leak(self):
        topo = build_topology("left-to-right", 2)
        g = GaussianEmission([0.0], [1.0])
        bad = HmmModel(topo, np.array([1.0, 0.0]), np.array([[0.5, 0.5], [0.5, 0.5]]), (g, g), 1)
        with pytest.raises(ValueError, match="mask"):
            bad.validate()

    def test_validate_rejects_ltr_pi(self):
        topo = build_topology("left-to-right", 2)
        g = GaussianEmission([0.0], [1.0])
        bad = HmmModel(topo, np.array([0.5, 0.5]), np.array([[0.5, 0.5], [0.0, 1.0]]), (g, g), 1)
        with pytest.raises(ValueError, match="state 0"):
            bad.validate()


class TestScoreSequence:
    def test_kinds_agree_with_primitives(self):
        rng = np.random.default_rng(43)
        model = random_model(rng, 3, 1)
        frames = rng.normal(size=(5, 1))
        assert score_sequence(model, frames, "forward") == log_forward(model, frames)
        assert score_sequence(model, frames, "viterbi") == viterbi_decode(model, frames).log_joint
