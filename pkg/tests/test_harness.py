"""Shot sampling, the statistics pipeline, and suppression-factor fits."""
import math

import numpy as np
import pytest

from blockmatch.codes import repetition_code_model
from blockmatch.harness import (
    FitResult,
    HarnessError,
    compute_lambda,
    detection_fraction,
    fit_epsilon,
    logical_error_probability,
    one_point_epsilon,
    oracle_decode,
    sample_shots,
)
from blockmatch.model import BOUNDARY, Edge, MatchingGraph


class TestSampling:
    def test_same_seed_reproduces_exactly(self):
        model = repetition_code_model(5, 40, 0.02, 0.03)
        a = list(sample_shots(model, 20, 40, seed=77))
        b = list(sample_shots(model, 20, 40, seed=77))
        for x, y in zip(a, b):
            assert (x.fired_detectors == y.fired_detectors).all()
            assert x.true_observables == y.true_observables

    def test_different_seeds_differ(self):
        model = repetition_code_model(5, 40, 0.02, 0.03)
        a = next(iter(sample_shots(model, 1, 40, seed=1)))
        b = next(iter(sample_shots(model, 1, 40, seed=2)))
        assert not np.array_equal(a.fired_detectors, b.fired_detectors)

    def test_shot_order_independence(self):
        # Counter-based keying: shot 7 is the same whether or not shots
        # 0..6 were drawn first.
        model = repetition_code_model(3, 30, 0.05, 0.05)
        full = list(sample_shots(model, 8, 30, seed=5))[7]
        gen = sample_shots(model, 8, 30, seed=5)
        for _ in range(7):
            next(gen)
        alone = next(gen)
        assert (full.fired_detectors == alone.fired_detectors).all()

    def test_detection_fraction_tracks_noise(self):
        model = repetition_code_model(5, 50, 0.02, 0.02)
        quiet = detection_fraction(sample_shots(model, 50, 50, seed=3))
        model_hot = repetition_code_model(5, 50, 0.1, 0.1)
        hot = detection_fraction(sample_shots(model_hot, 50, 50, seed=3))
        assert 0.0 < quiet < hot < 1.0

    def test_detection_fraction_empty_rejected(self):
        with pytest.raises(HarnessError, match="empty"):
            detection_fraction([])

    def test_per_cycle_matches_flat_events(self):
        model = repetition_code_model(5, 30, 0.05, 0.05)
        dpc = model.detectors_per_cycle
        for s in sample_shots(model, 10, 30, seed=9):
            rebuilt = [
                t * dpc + j for t, cyc in enumerate(s.per_cycle()) for j in cyc
            ]
            assert rebuilt == s.events()

    def test_observable_flip_rate_is_binomially_plausible(self):
        # Compare the sampled flip rate to the exact odd-parity probability
        # over all observable-carrying mechanisms.
        model = repetition_code_model(2, 4, 0.2, 0.01)
        prod = 1.0
        for m in model.instantiate(4):
            obs = 0
            for part in m.parts:
                obs ^= part.observables
            if obs & 1:
                prod *= 1.0 - 2.0 * m.probability
        p_flip = 0.5 * (1.0 - prod)
        n = 2000
        flips = sum(
            s.true_observables & 1 for s in sample_shots(model, n, 4, seed=13)
        )
        assert abs(flips / n - p_flip) < 4 * math.sqrt(p_flip * (1 - p_flip) / n)


class TestOneShotFormulas:
    def test_round_trip_tight_when_well_conditioned(self):
        for eps in (1e-6, 1e-3, 0.01):
            for t in (1, 3, 10, 25):
                p = logical_error_probability(eps, t)
                assert one_point_epsilon(p, t) == pytest.approx(eps, abs=1e-12)

    def test_round_trip_near_saturation(self):
        # As p_L approaches 0.5 the inversion is ill-conditioned; accuracy
        # degrades gracefully rather than failing.
        for eps, t in ((0.1, 100), (0.4, 10)):
            p = logical_error_probability(eps, t)
            assert one_point_epsilon(p, t) == pytest.approx(eps, rel=1e-5)

    def test_t_equals_one_is_identity(self):
        assert one_point_epsilon(0.037, 1) == pytest.approx(0.037, abs=1e-15)

    def test_domain_errors(self):
        with pytest.raises(HarnessError, match="outside"):
            one_point_epsilon(0.5, 10)
        with pytest.raises(HarnessError, match=">= 1"):
            one_point_epsilon(0.1, 0)


class TestFitEpsilon:
    def test_exact_points_recover_epsilon(self):
        eps = 0.013
        points = [
            (t, logical_error_probability(eps, t), 10**6) for t in (5, 10, 20, 40)
        ]
        fit = fit_epsilon(points, label="exact")
        assert fit.epsilon == pytest.approx(eps, abs=1e-9)
        assert fit.label == "exact"

    def test_single_point_degenerates_to_closed_form(self):
        eps = 0.02
        p = logical_error_probability(eps, 12)
        fit = fit_epsilon([(12, p, 10**5)])
        assert fit.epsilon == pytest.approx(one_point_epsilon(p, 12), abs=1e-12)
        assert fit.sigma > 0

    def test_saturated_points_dropped(self):
        points = [(5, 0.01, 1000), (10, 0.5, 1000), (20, 0.038, 1000)]
        fit = fit_epsilon(points)
        assert math.isfinite(fit.epsilon)
        with pytest.raises(HarnessError, match="usable"):
            fit_epsilon([(5, 0.5, 1000)])

    def test_all_points_at_same_t_rejected(self):
        with pytest.raises(HarnessError, match="same t"):
            fit_epsilon([(5, 0.01, 1000), (5, 0.02, 1000)])

    def test_sigma_calibration_against_binomial_draws(self):
        # Monte-Carlo check that quoted sigma matches the fit's actual
        # scatter: most draws should land within 3 sigma of truth.
        eps = 0.01
        rng = np.random.default_rng(42)
        n = 20_000
        ts = (5, 10, 20)
        within = 0
        trials = 300
        for _ in range(trials):
            points = []
            for t in ts:
                p = logical_error_probability(eps, t)
                points.append((t, rng.binomial(n, p) / n, n))
            fit = fit_epsilon(points)
            if abs(fit.epsilon - eps) < 3 * fit.sigma:
                within += 1
        assert within >= 0.97 * trials


class TestComputeLambda:
    def test_geometric_series_gives_exact_lambda(self):
        fits = [
            (3, FitResult(8e-3, 0.0)),
            (5, FitResult(4e-3, 0.0)),
            (7, FitResult(2e-3, 0.0)),
        ]
        res = compute_lambda(fits)
        assert res.lam == pytest.approx(2.0, abs=1e-12)
        assert res.delta == pytest.approx(0.0, abs=1e-12)

    def test_flat_epsilons_give_lambda_one(self):
        fits = [(d, FitResult(5e-3, 1e-4)) for d in (3, 5, 7)]
        res = compute_lambda(fits)
        assert res.lam == pytest.approx(1.0, abs=1e-9)

    def test_scaling_all_epsilons_leaves_lambda_unchanged(self):
        base = [(3, 9e-3), (5, 3.1e-3), (7, 1.2e-3)]
        a = compute_lambda([(d, FitResult(e, e * 0.05)) for d, e in base])
        b = compute_lambda([(d, FitResult(10 * e, e * 0.5)) for d, e in base])
        assert a.lam == pytest.approx(b.lam, rel=1e-9)

    def test_single_distance_rejected(self):
        with pytest.raises(HarnessError, match="distinct distances"):
            compute_lambda([(3, FitResult(1e-3, 0.0)), (3, FitResult(2e-3, 0.0))])


class TestOracleBasics:
    def test_two_events_direct_edge(self):
        g = MatchingGraph(
            num_nodes=2,
            num_observables=1,
            edges=[Edge(0, 0, 1, 0.1, 2.0, 1)],
        )
        m = oracle_decode(g, [0, 1])
        assert m.total_weight == 2.0
        assert m.observable_mask == 1

    def test_boundary_fallback(self):
        g = MatchingGraph(
            num_nodes=2,
            num_observables=1,
            edges=[Edge(0, 0, 1, 0.1, 9.0, 0), Edge(1, 0, BOUNDARY, 0.1, 1.0, 1)],
        )
        m = oracle_decode(g, [0])
        assert m.pairs == [(0, ("graph",))]
        assert m.observable_mask == 1

    def test_event_limit_enforced(self):
        g = MatchingGraph(
            num_nodes=20,
            num_observables=0,
            edges=[Edge(i, i, i + 1, 0.1, 1.0, 0) for i in range(19)],
        )
        with pytest.raises(HarnessError, match="enumeration bound"):
            oracle_decode(g, list(range(16)))

    def test_unreachable_odd_parity_rejected(self):
        g = MatchingGraph(
            num_nodes=2, num_observables=0, edges=[Edge(0, 0, 1, 0.1, 1.0, 0)]
        )
        with pytest.raises(HarnessError, match="no boundary"):
            oracle_decode(g, [0])
