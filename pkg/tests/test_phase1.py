import numpy as np
import pytest

from layoutforge import gradcheck as gc
from layoutforge.grids import AttentionMaps, SubjectSet, grayscale_dilate3x3, spatial_argmax
from layoutforge.phase1 import (
    LossWeights,
    build_blocking_sequence,
    loss_be,
    loss_norm,
    loss_overlap,
    loss_phase1,
    norm_threshold,
    sort_tokens_by_max,
)


def maps_from(token_grids: dict[int, np.ndarray], N: int) -> AttentionMaps:
    P = next(iter(token_grids.values())).shape[0]
    data = np.zeros((P, P, N))
    for s, g in token_grids.items():
        data[:, :, s] = g
    return AttentionMaps(data)


def peak_map(P, r, c, value=1.0):
    g = np.zeros((P, P))
    g[r, c] = value
    return g


class TestSortTokens:
    def test_tiebreak_by_index(self):
        A = maps_from({2: peak_map(4, 0, 0, 0.9), 5: peak_map(4, 1, 1, 0.7), 7: peak_map(4, 2, 2, 0.7)}, 8)
        assert sort_tokens_by_max(A, SubjectSet(tokens=(2, 5, 7))) == [2, 5, 7]

    def test_singleton(self):
        A = maps_from({3: peak_map(4, 0, 0, 0.5)}, 4)
        assert sort_tokens_by_max(A, SubjectSet(tokens=(3,))) == [3]

    def test_direct_comparison(self):
        A = maps_from({1: peak_map(4, 0, 0, 0.1), 4: peak_map(4, 1, 1, 0.8)}, 6)
        assert sort_tokens_by_max(A, SubjectSet(tokens=(1, 4))) == [4, 1]

    def test_empty_subjects(self):
        A = maps_from({0: peak_map(4, 0, 0)}, 2)
        with pytest.raises(ValueError):
            sort_tokens_by_max(A, SubjectSet(tokens=()))


class TestBlockingSequence:
    def test_single_cell(self):
        A = maps_from({0: peak_map(4, 0, 0, 0.9)}, 2)
        seq = build_blocking_sequence(A, SubjectSet(tokens=(0,)), LossWeights(rect_side=1))
        expected = np.zeros((4, 4), dtype=bool)
        expected[0, 0] = True
        assert np.array_equal(seq.masks[0].bits, expected)

    def test_identical_maps_forced_exclusion(self):
        g = np.full((4, 4), 0.1)
        g[0, 0] = 1.0
        A = maps_from({0: g, 1: g.copy()}, 2)
        seq = build_blocking_sequence(A, SubjectSet(tokens=(0, 1)), LossWeights(rect_side=1))
        assert seq.masks[0].bits[0, 0]
        assert seq.masks[1].area() > seq.masks[0].area()
        assert seq.masks[1].contains(seq.masks[0])

    def test_matches_literal_reimplementation(self):
        # independent step-by-step oracle, plain loops
        rng = np.random.default_rng(11)
        P, side = 8, 3
        S = SubjectSet(tokens=(0, 1, 2))
        data = rng.random((P, P, 3))
        A = AttentionMaps(data)
        seq = build_blocking_sequence(A, S, LossWeights(rect_side=side))

        order = sorted(S.tokens, key=lambda s: (-data[:, :, s].max(), s))
        acc = np.zeros((P, P), dtype=bool)
        oracle_masks = []
        for s in order:
            filt = data[:, :, s].copy()
            filt[acc] = 0.0
            r, c = np.unravel_index(np.argmax(filt), (P, P))
            lo, hi = (side - 1) // 2, side // 2
            for y in range(max(r - lo, 0), min(r + hi + 1, P)):
                for x in range(max(c - lo, 0), min(c + hi + 1, P)):
                    acc[y, x] = True
            oracle_masks.append(acc.copy())
        assert list(seq.order) == order
        for got, want in zip(seq.masks, oracle_masks):
            assert np.array_equal(got.bits, want)

    def test_monotone_and_argmax_outside_prior(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            data = rng.random((8, 8, 4))
            A = AttentionMaps(data)
            S = SubjectSet(tokens=(0, 1, 2, 3))
            w = LossWeights(rect_side=3)
            seq = build_blocking_sequence(A, S, w)
            for i in range(1, len(seq.masks)):
                assert seq.masks[i].contains(seq.masks[i - 1])
                prior = seq.masks[i - 1].bits
                filt = A.token_map(seq.order[i]) * (~prior)
                r, c = spatial_argmax(filt)
                assert not prior[r, c]


class TestLossBE:
    def test_single_subject_reduction(self):
        A = maps_from({0: peak_map(4, 1, 2, 0.8)}, 2)
        S = SubjectSet(tokens=(0,))
        seq = build_blocking_sequence(A, S, LossWeights())
        assert loss_be(A, S, seq) == pytest.approx(0.2)

    def test_disjoint_unit_peaks(self):
        A = maps_from({0: peak_map(8, 0, 0), 1: peak_map(8, 7, 7)}, 2)
        S = SubjectSet(tokens=(0, 1))
        seq = build_blocking_sequence(A, S, LossWeights(rect_side=1))
        assert loss_be(A, S, seq) == pytest.approx(0.0)

    def test_shared_peak_fully_blocked(self):
        A = maps_from({0: peak_map(8, 3, 3), 1: peak_map(8, 3, 3)}, 2)
        S = SubjectSet(tokens=(0, 1))
        seq = build_blocking_sequence(A, S, LossWeights(rect_side=1))
        assert loss_be(A, S, seq) == pytest.approx(1.0)

    def test_equals_single_subject_objective_on_random_inputs(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            data = rng.random((6, 6, 3))
            A = AttentionMaps(data)
            S = SubjectSet(tokens=(1,))
            seq = build_blocking_sequence(A, S, LossWeights())
            assert loss_be(A, S, seq) == pytest.approx(1.0 - data[:, :, 1].max())


class TestLossOverlap:
    def test_disjoint_dilated_supports(self):
        A = maps_from({0: peak_map(8, 0, 0), 1: peak_map(8, 7, 7)}, 2)
        per, total = loss_overlap(A, SubjectSet(tokens=(0, 1)))
        assert total == 0.0 and all(v == 0.0 for v in per.values())

    def test_constant_maps(self):
        g = np.full((4, 4), 0.1)
        A = maps_from({0: g, 1: g.copy()}, 2)
        per, total = loss_overlap(A, SubjectSet(tokens=(0, 1)))
        assert per[0] == pytest.approx(0.16)
        assert per[1] == pytest.approx(0.16)
        assert total == pytest.approx(0.32)

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(12)
        data = rng.random((8, 8, 3))
        A = AttentionMaps(data)
        S = SubjectSet(tokens=(0, 1, 2))
        per, total = loss_overlap(A, S)
        dil = [grayscale_dilate3x3(data[:, :, s]) for s in range(3)]
        for s in range(3):
            acc = 0.0
            for s2 in range(3):
                if s2 == s:
                    continue
                acc += float(np.sum(dil[s] * dil[s2]))
            assert per[s] == pytest.approx(acc / 2, abs=1e-12)
        assert total == pytest.approx(sum(per.values()), abs=1e-12)

    def test_single_subject_zero(self):
        A = maps_from({0: peak_map(4, 0, 0)}, 1)
        per, total = loss_overlap(A, SubjectSet(tokens=(0,)))
        assert total == 0.0


class TestLossNorm:
    def test_below_threshold(self):
        A = maps_from({s: np.ones((16, 16)) for s in range(4)}, 4)
        S = SubjectSet(tokens=(0, 1, 2, 3))
        assert norm_threshold(16, 4) == 64
        assert all(v == 0.0 for v in loss_norm(A, S).values())

    def test_above_threshold(self):
        A = maps_from({s: np.full((16, 16), 5.0) for s in range(4)}, 4)
        S = SubjectSet(tokens=(0, 1, 2, 3))
        assert all(v == pytest.approx(80.0) for v in loss_norm(A, S).values())

    def test_zero_map(self):
        A = maps_from({0: peak_map(8, 0, 0, 0.0), 1: peak_map(8, 1, 1)}, 2)
        S = SubjectSet(tokens=(0, 1))
        assert loss_norm(A, S)[0] == 0.0

    def test_range_property(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            scale = rng.uniform(0.1, 20)
            data = rng.random((8, 8, 2)) * scale
            A = AttentionMaps(data)
            S = SubjectSet(tokens=(0, 1))
            C = norm_threshold(8, 2)
            for v in loss_norm(A, S).values():
                assert v == 0.0 or v > C


class TestLossPhase1:
    def test_zero_weights(self):
        rng = np.random.default_rng(1)
        A = AttentionMaps(rng.random((8, 8, 3)))
        S = SubjectSet(tokens=(0, 1))
        w = LossWeights(lambda_be=0, lambda_ol=0, lambda_norm=0)
        total, grad, _ = loss_phase1(A, S, w)
        assert total == 0.0
        assert np.all(grad == 0)

    def test_single_subject_subgradient(self):
        A = maps_from({0: peak_map(6, 2, 3, 0.4)}, 2)
        S = SubjectSet(tokens=(0,))
        w = LossWeights(lambda_be=1.0, lambda_ol=0, lambda_norm=0)
        total, grad, _ = loss_phase1(A, S, w)
        assert total == pytest.approx(0.6)
        expected = np.zeros((6, 6, 2))
        expected[2, 3, 0] = -1.0
        assert np.array_equal(grad, expected)

    def test_nan_rejected(self):
        data = np.ones((4, 4, 2))
        data[0, 0, 0] = np.nan  # NaN passes the nonnegativity check
        A = AttentionMaps(data)
        with pytest.raises(FloatingPointError):
            loss_phase1(A, SubjectSet(tokens=(0,)), LossWeights())

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(21)
        w = LossWeights()
        for _ in range(5):
            A, S = gc.make_instance(16, 6, 3, rng)
            err = gc.check_loss1_gradient(A, S, w, rng, n_probes=120)
            assert err < 1e-4

    def test_norm_branch_gradient(self):
        # scale maps so the norm indicator is active, away from the boundary
        rng = np.random.default_rng(22)
        A, S = gc.make_instance(8, 4, 2, rng)
        scaled = AttentionMaps(A.data * 60.0)  # ||A||_F ~ 240 >> C = 32
        w = LossWeights(lambda_be=0, lambda_ol=0, lambda_norm=1.0)
        err = gc.check_loss1_gradient(scaled, S, w, rng, n_probes=60)
        assert err < 1e-4
