import itertools

import numpy as np
import pytest

from oracles import best_single_move, indicator, surrogate_value
from sonic.bench import align_and_score, clustering_distance
from sonic.errors import GuardTripped, TooManyClusters
from sonic.estimator import (
    FitOptions,
    alternating_fit,
    cluster_objective,
    fit,
    fit_exact_greedy,
    greedy_sweep,
    initial_clustering,
    risk,
    update_v,
)
from sonic.lasso import LassoOptions, lasso_objective, solve_lasso_quadratic
from sonic.moments import MomentEstimates, estimate_moments
from sonic.panel import Clustering, Panel
from sonic.simulate import SimulationConfig, simulate


def random_moments(rng, n, t=None):
    t = t or 3 * n
    y = rng.standard_normal((t, n))
    y[1:] += 0.4 * y[:-1] @ rng.standard_normal((n, n)) / np.sqrt(n)
    return estimate_moments(Panel.from_array(y))


def planted(n, k, t, seed, coef=0.5, p=1.0):
    return simulate(SimulationConfig(n=n, k=k, s=1, coef=coef, t=t, p=p, seed=seed))


class TestRisk:
    def test_zero(self, rng):
        mom = random_moments(rng, 5)
        c = Clustering.from_labels([0, 1, 0, 1, 1])
        assert risk(np.zeros((5, 2)), c, mom.sigma_hat, mom.a_hat, 0.3) == 0.0

    def test_scalar(self):
        c = Clustering.from_labels([0])
        assert risk(np.array([[1.0]]), c, np.array([[2.0]]), np.array([[3.0]]), 1.0) == -1.0

    def test_column_decomposition(self, rng):
        for _ in range(10):
            mom = random_moments(rng, 7)
            labels = np.concatenate([[0, 1, 2], rng.integers(0, 3, 4)])
            c = Clustering(rng.permutation(labels), 3)
            v = rng.standard_normal((7, 3))
            z = indicator(c.labels, 3)
            total = sum(lasso_objective(mom.sigma_hat, mom.a_hat @ z[:, j], 0.2, v[:, j]) for j in range(3))
            assert risk(v, c, mom.sigma_hat, mom.a_hat, 0.2) == pytest.approx(total, abs=1e-10)


class TestUpdateV:
    def test_huge_lambda(self, rng):
        mom = random_moments(rng, 6)
        c = Clustering.from_labels([0, 0, 1, 1, 2, 2])
        assert not update_v(c, mom.sigma_hat, mom.a_hat, 1e6).any()

    def test_identity_gram(self, rng):
        n = 5
        a = rng.standard_normal((n, n))
        c = Clustering.from_labels([0] * n)
        v = update_v(c, np.eye(n), a, 0.0)
        np.testing.assert_allclose(v[:, 0], a @ np.full(n, 1 / np.sqrt(n)), atol=1e-12)

    def test_global_minimality(self, rng):
        mom = random_moments(rng, 8)
        c = Clustering.from_labels([0, 1, 2, 0, 1, 2, 0, 1])
        v = update_v(c, mom.sigma_hat, mom.a_hat, 0.1)
        best = risk(v, c, mom.sigma_hat, mom.a_hat, 0.1)
        for _ in range(20):
            other = v + 0.1 * rng.standard_normal(v.shape)
            assert best <= risk(other, c, mom.sigma_hat, mom.a_hat, 0.1)
            assert best <= risk(rng.standard_normal(v.shape), c, mom.sigma_hat, mom.a_hat, 0.1)


class TestGreedySweep:
    def test_zero_v_no_move(self, rng):
        mom = random_moments(rng, 6)
        c = Clustering.from_labels([0, 1, 0, 1, 0, 1])
        assert greedy_sweep(np.zeros((6, 2)), c, mom.a_hat) is c

    def test_single_move_matches_enumeration(self, rng):
        opts = FitOptions(moves_per_update=1)
        checked = 0
        for _ in range(200):
            a = rng.standard_normal((3, 3))
            v = rng.standard_normal((3, 2))
            c = Clustering(rng.permutation([0, 1, rng.integers(0, 2)]), 2)
            expected = best_single_move(v, c.labels, 2, a)
            got = greedy_sweep(v, c, a, opts)
            if expected is None:
                assert got == c
            else:
                np.testing.assert_array_equal(got.labels, expected)
                checked += 1
        assert checked > 20

    def test_surrogate_decreases(self, rng):
        for _ in range(50):
            n, k = 9, 3
            a = rng.standard_normal((n, n))
            v = rng.standard_normal((n, k))
            c = initial_clustering(n, k, rng)
            out = greedy_sweep(v, c, a)
            assert surrogate_value(v, out.labels, k, a) <= surrogate_value(v, c.labels, k, a) + 1e-12

    def test_idempotent_at_local_optimum(self, rng):
        a = rng.standard_normal((8, 8))
        v = rng.standard_normal((8, 3))
        c = initial_clustering(8, 3, rng)
        opts = FitOptions(moves_per_update=10_000)
        once = greedy_sweep(v, c, a, opts)
        assert greedy_sweep(v, once, a, opts) is once


class TestFit:
    def test_single_cluster(self, rng):
        mom = random_moments(rng, 6)
        model = fit(mom, 1, 0.1)
        assert not model.clustering.labels.any()
        col = solve_lasso_quadratic(mom.sigma_hat, mom.a_hat @ np.full(6, 1 / np.sqrt(6)), 0.1)
        np.testing.assert_allclose(model.v[:, 0], col, atol=1e-12)

    def test_planted_recovery(self):
        ok = 0
        for seed in range(5):
            sim = planted(6, 2, 4000, seed)
            model = fit(sim.panel, 2, 0.05, FitOptions(restarts=5, seed=seed))
            ev = align_and_score(model, sim.truth)
            ok += ev.clustering_distance == 0 and ev.support_exact
        assert ok >= 4

    def test_k_exceeds_n(self, rng):
        with pytest.raises(TooManyClusters):
            fit(random_moments(rng, 4), 5, 0.1)

    def test_history_monotone_and_terminates(self):
        for seed in range(10):
            sim = planted(40, 4, 200, seed)
            model = fit(sim.panel, 4, 0.1, FitOptions(seed=seed, restarts=2))
            h = np.array(model.history)
            assert np.all(np.diff(h) <= 1e-12 * (1 + np.abs(h[:-1])))
            assert model.converged

    def test_thread_count_does_not_change_result(self):
        sim = planted(30, 5, 150, 3)
        a = fit(sim.panel, 5, 0.1, FitOptions(seed=1, restarts=6, threads=1))
        b = fit(sim.panel, 5, 0.1, FitOptions(seed=1, restarts=6, threads=4))
        assert a.clustering == b.clustering
        np.testing.assert_array_equal(a.v, b.v)
        assert a.risk == b.risk and a.best_restart == b.best_restart

    def test_restart_bookkeeping(self):
        sim = planted(20, 4, 100, 0)
        model = fit(sim.panel, 4, 0.1, FitOptions(seed=9, restarts=3))
        assert model.restarts_used == 3 and len(model.restart_seeds) == 3
        assert model.risk == pytest.approx(risk(model.v, model.clustering, *_ma(sim.panel), 0.1), abs=1e-12)

    def test_node_relabelling_equivariance(self):
        rng = np.random.default_rng(21)
        for trial in range(5):
            sim = planted(8, 2, 300, trial)
            perm = rng.permutation(8)
            mom = estimate_moments(sim.panel)
            mom_p = estimate_moments(sim.panel.permute_nodes(perm))
            init = initial_clustering(8, 2, np.random.default_rng(trial))
            init_p = Clustering(init.labels[perm], 2)
            opts = FitOptions(lasso_opts=LassoOptions(tol=1e-12))
            r = alternating_fit(mom, init, 0.05, opts)
            r_p = alternating_fit(mom_p, init_p, 0.05, opts)
            theta = indicator(r.clustering.labels, 2) @ r.v.T
            theta_p = indicator(r_p.clustering.labels, 2) @ r_p.v.T
            np.testing.assert_allclose(theta_p, theta[np.ix_(perm, perm)], atol=1e-8)

    def test_default_scenario_trend(self):
        lam = np.sqrt(np.log(100) / 100)
        errs = {5: [], 25: []}
        for rep in range(20):
            for k in errs:
                sim = simulate(SimulationConfig(n=100, k=k, t=100, seed=2000 + rep))
                model = fit(sim.panel, k, lam, FitOptions(seed=rep))
                errs[k].append(align_and_score(model, sim.truth).relative_frobenius)
        assert np.mean(errs[25]) < np.mean(errs[5])


def _ma(panel):
    mom = estimate_moments(panel)
    return mom.sigma_hat, mom.a_hat


class TestExactGreedy:
    def _mom(self, seed=0):
        return estimate_moments(planted(6, 2, 4000, seed).panel)

    def test_dominates_alternating(self):
        for seed in range(5):
            mom = self._mom(seed)
            opts = FitOptions(restarts=1, seed=seed)
            exact = fit_exact_greedy(mom, 2, 0.05, opts)
            alt = fit(mom, 2, 0.05, opts)
            assert exact.risk <= alt.risk + 1e-10

    def test_local_optimality(self):
        mom = estimate_moments(planted(7, 3, 300, 4).panel)
        lam = 0.08
        model = fit_exact_greedy(mom, 3, lam, FitOptions(restarts=2, seed=3))
        f0, _ = cluster_objective(mom, model.clustering, lam)
        labels = model.clustering.labels
        for i, l in itertools.product(range(7), range(3)):
            if l == labels[i] or np.sum(labels == labels[i]) == 1:
                continue
            cand = labels.copy()
            cand[i] = l
            f, _ = cluster_objective(mom, Clustering(cand, 3), lam)
            assert f >= f0 - 1e-9

    def test_single_cluster_same_as_fit(self, rng):
        mom = random_moments(rng, 5)
        a = fit_exact_greedy(mom, 1, 0.1)
        b = fit(mom, 1, 0.1)
        assert a.clustering == b.clustering
        np.testing.assert_allclose(a.v, b.v, atol=1e-12)

    def test_guard(self, rng):
        with pytest.raises(GuardTripped):
            fit_exact_greedy(random_moments(rng, 31, t=70), 2, 0.1)

    def test_flag_dispatches(self):
        mom = self._mom()
        a = fit(mom, 2, 0.05, FitOptions(exact_greedy=True, restarts=2))
        b = fit_exact_greedy(mom, 2, 0.05, FitOptions(restarts=2))
        assert a.clustering == b.clustering and a.risk == b.risk

    def test_agrees_with_alternating_on_strong_signal(self):
        agree = 0
        for seed in range(20):
            n = 6 + seed % 5
            sim = planted(n, 2, 4000, 100 + seed)
            opts = FitOptions(restarts=5, seed=seed)
            a = fit(sim.panel, 2, 0.05, opts)
            b = fit_exact_greedy(sim.panel, 2, 0.05, opts)
            agree += clustering_distance(a.clustering, b.clustering) == 0
        assert agree == 20


def test_moments_passthrough(rng):
    mom = random_moments(rng, 4)
    assert isinstance(mom, MomentEstimates)
    assert fit(mom, 2, 0.1).n == 4
