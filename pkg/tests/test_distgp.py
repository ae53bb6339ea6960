import math

import numpy as np
import pytest

from commgp import distgp
from commgp.distgp import (
    BitLedger,
    PredictiveDist,
    bcm_combine,
    fuse_predictions,
    kl_gaussian,
    nystrom_complete,
    poe_combine,
    split_dataset,
)
from commgp.errors import DimensionMismatch, SingularAnchor
from commgp.gp import KernelSpec, assemble, gram_matrix, predict, smse
from conftest import random_spd


def toy_machines(seed=0, n=120, d=3, m=4):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d)) @ np.linalg.cholesky(random_spd(rng, d)).T
    X -= X.mean(axis=0)
    y = np.sin(X @ rng.standard_normal(d) / math.sqrt(d)) + 0.1 * rng.standard_normal(n)
    return split_dataset(X, y - y.mean(), m, seed)


SE = KernelSpec("se", sigma_s=1.0, lengthscale=2.0)


class TestNystrom:
    def test_exact_for_low_rank(self, rng):
        X = rng.standard_normal((30, 3))
        G = gram_matrix(KernelSpec("linear", a=1.0, b=0.0), X)
        ng = nystrom_complete(G[:5, :5], G[:5])
        assert np.max(np.abs(ng.approx - G)) <= 1e-8 * np.max(np.abs(G))

    def test_full_anchor_set(self, rng):
        X = rng.standard_normal((12, 2))
        G = gram_matrix(SE, X)
        assert np.allclose(nystrom_complete(G, G).approx, G, atol=1e-8)

    def test_schur_complement(self, rng):
        X = rng.standard_normal((40, 2))
        G = gram_matrix(SE, X)
        K = 20
        ng = nystrom_complete(G[:K, :K], G[:K])
        schur = G[K:, K:] - G[K:, :K] @ np.linalg.solve(G[:K, :K], G[:K, K:])
        err = G - ng.approx
        assert np.max(np.abs(err[K:, K:] - schur)) <= 1e-8
        assert np.max(np.abs(err[:K])) <= 1e-8
        assert np.max(np.abs(err[:, :K])) <= 1e-8

    def test_symmetric_psd(self, rng):
        X = rng.standard_normal((25, 2))
        G = gram_matrix(SE, X)
        A = nystrom_complete(G[:8, :8], G[:8]).approx
        assert np.array_equal(A, A.T)
        w = np.linalg.eigvalsh(A)
        assert w.min() >= -1e-10 * w.max()

    def test_jitter_for_duplicate_anchors(self):
        X = np.zeros((4, 2))
        G = gram_matrix(SE, X)
        assert nystrom_complete(G[:2, :2], G[:2]).jitter > 0

    def test_singular_anchor(self):
        G = np.zeros((2, 2))
        with pytest.raises(SingularAnchor):
            nystrom_complete(G, G)

    def test_shape_check(self):
        with pytest.raises(DimensionMismatch):
            nystrom_complete(np.eye(3), np.ones((2, 5)))

    def test_woodbury_objective_matches_dense(self, rng):
        from commgp.gp import lml_dense

        X = rng.standard_normal((50, 2))
        y = rng.standard_normal(50)
        obj = distgp.nystrom_objective_fn(X[:10], X, y)
        v, _ = obj(SE, 0.3)
        G = distgp.nystrom_gram_fn(X[:10], X)(SE)
        assert v == pytest.approx(lml_dense(G, [], 0.3, y)[0], rel=1e-9)

    @pytest.mark.parametrize("kernel", [SE, KernelSpec("linear", a=0.8, b=0.3)])
    def test_woodbury_gradient(self, rng, kernel):
        X = rng.standard_normal((40, 2))
        y = rng.standard_normal(40)
        obj = distgp.nystrom_objective_fn(X[:8], X, y)
        k = len(kernel.param_names)

        def f(theta):
            return obj(kernel.with_log_params(theta[:k]), math.exp(theta[k]))

        theta = np.r_[kernel.log_params(), math.log(0.2)]
        _, g = f(theta)
        h = 1e-5
        for j in range(theta.size):
            e = np.zeros_like(theta)
            e[j] = h
            fd = (f(theta + e)[0] - f(theta - e)[0]) / (2 * h)
            assert g[j] == pytest.approx(fd, rel=1e-4, abs=1e-6)


class TestFusion:
    def test_identical(self):
        p = PredictiveDist(np.array([1.0, 2.0]), np.array([[2.0, 0.3], [0.3, 1.0]]))
        f = fuse_predictions([p, p, p])
        assert np.allclose(f.mean, p.mean) and np.allclose(f.cov, p.cov)

    def test_one_dimensional(self):
        f = fuse_predictions([PredictiveDist(np.array([0.0]), np.array([[1.0]])),
                              PredictiveDist(np.array([2.0]), np.array([[1.0]]))])
        assert f.mean[0] == 1.0 and f.cov[0, 0] == 2.0

    def test_variance_vectors(self):
        f = fuse_predictions([PredictiveDist(np.array([0.0, 1.0]), np.array([1.0, 1.0])),
                              PredictiveDist(np.array([2.0, 1.0]), np.array([1.0, 3.0]))])
        assert np.allclose(f.mean, [1.0, 1.0]) and np.allclose(f.cov, [2.0, 2.0])

    def test_minimizes_kl(self, rng):
        dists = []
        for _ in range(3):
            dists.append(PredictiveDist(rng.standard_normal(2), random_spd(rng, 2)))
        f = fuse_predictions(dists)
        obj = lambda mu, cov: sum(kl_gaussian(p.mean, p.cov, mu, cov) for p in dists)
        best = obj(f.mean, f.cov)
        for _ in range(200):
            d = 0.05 * rng.standard_normal((2, 2))
            cov = f.cov + 0.5 * (d + d.T)
            if np.linalg.eigvalsh(cov).min() <= 0:
                continue
            assert obj(f.mean + 0.05 * rng.standard_normal(2), cov) >= best - 1e-12

    def test_errors(self):
        with pytest.raises(ValueError):
            fuse_predictions([])
        with pytest.raises(DimensionMismatch):
            fuse_predictions([PredictiveDist(np.zeros(1), np.eye(1)), PredictiveDist(np.zeros(2), np.eye(2))])

    def test_kl_zero_for_equal(self):
        assert kl_gaussian(np.zeros(2), np.eye(2), np.zeros(2), np.eye(2)) == pytest.approx(0.0, abs=1e-14)


class TestBaselines:
    def test_poe_two_gaussians(self):
        mean, var = poe_combine([[0.0], [2.0]], [[1.0], [1.0]])
        assert mean[0] == 1.0 and var[0] == 0.5

    def test_poe_identical(self):
        mean, var = poe_combine([[0.3]] * 4, [[2.0]] * 4)
        assert mean[0] == pytest.approx(0.3) and var[0] == pytest.approx(0.5)

    def test_bcm_prior_correction(self):
        mean, var, bad = bcm_combine([[0.0], [2.0]], [[0.5], [0.5]], [1.0])
        # precision 2 + 2 - 1 = 3
        assert var[0] == pytest.approx(1 / 3) and mean[0] == pytest.approx(4 / 3) and not bad[0]

    def test_bcm_fallback(self):
        mean, var, bad = bcm_combine([[0.0], [2.0]], [[1.0], [1.0]], [0.4])
        assert bad[0] and var[0] == 0.5 and mean[0] == 1.0

    def test_single_machine_equals_local(self):
        machines = toy_machines(m=1)
        model = assemble(SE, 0.1, machines[0].local_inputs, machines[0].local_targets)
        xs = np.random.default_rng(1).standard_normal((5, 3))
        post = predict(model, xs)
        for fn in (distgp.predict_poe, distgp.predict_bcm):
            p = fn([model], xs)
            assert np.allclose(p.mean, post.mean)
            assert np.allclose(p.cov, post.predictive_variance)

    def test_local_experts_share_hyperparameters(self):
        experts = distgp.train_local_experts(toy_machines(), "se", max_iters=30)
        assert len({e.kernel for e in experts}) == 1


class TestLedger:
    def test_totals(self):
        led = BitLedger()
        led.record(0, None, "covariance", 10)
        led.record(1, 0, "targets", 5)
        assert led.total == 15
        assert led.by_kind()["covariance"] == 10
        assert led.as_list()[0]["receiver"] == "all"

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            BitLedger().record(0, 1, "gossip", 3)
        with pytest.raises(ValueError):
            BitLedger().record(0, 1, "targets", 2.5)


class TestSplit:
    def test_sizes_and_determinism(self, rng):
        X, y = rng.standard_normal((103, 2)), rng.standard_normal(103)
        a, b = split_dataset(X, y, 10, 4), split_dataset(X, y, 10, 4)
        assert sum(m.n for m in a) == 103
        assert all(np.array_equal(p.local_inputs, q.local_inputs) for p, q in zip(a, b))

    def test_local_cov(self):
        m = toy_machines()[0]
        assert np.allclose(m.local_cov.entries, m.local_inputs.T @ m.local_inputs / m.n, atol=1e-10)


def expected_ledger(machines, codec, rate, protocol):
    """Bits recomputed from serialized artifacts, independently of the ledger."""
    d = machines[0].dim
    cov = 64 * d * (d + 1) // 2
    total = 0
    if protocol == "single":
        total += cov
        for m in machines[1:]:
            tx = distgp.transmit_inputs(m.local_inputs, m.local_cov, machines[0].local_cov, codec, rate)
            total += (cov if codec == "persym" else 0) + 64 * m.n
            total += tx.header_bits + tx.payload_bits
            assert math.ceil((tx.header_bits + tx.payload_bits) / 8) == len(tx.wire)
    return total


class TestProtocols:
    @pytest.mark.parametrize("codec,rate", [("persym", 0), ("persym", 7), ("dimred", 32), ("lossless", 0)])
    def test_single_center_ledger_exact(self, codec, rate):
        machines = toy_machines()
        _, ledger = distgp.run_single_center(machines, codec, rate, SE, noise_variance=0.1, fit=False)
        assert ledger.total == expected_ledger(machines, codec, rate, "single")

    def test_lossless_single_center_equals_full(self):
        machines = toy_machines()
        sc, _ = distgp.run_single_center(machines, "lossless", 0, "se", max_iters=40)
        full, _ = distgp.run_full(machines, "se", max_iters=40)
        X = np.vstack([m.local_inputs for m in machines])
        assert np.max(np.abs(sc.gram - gram_matrix(sc.kernel, X))) <= 1e-10
        xs = np.random.default_rng(5).standard_normal((20, 3))
        y = np.sin(xs[:, 0])
        assert smse(y, predict(sc, xs).mean) == smse(y, predict(full, xs).mean)

    def test_zero_rate_runs(self):
        machines = toy_machines()
        model, _ = distgp.run_single_center(machines, "persym", 0, "se", max_iters=40)
        xs = np.random.default_rng(5).standard_normal((20, 3))
        assert math.isfinite(smse(np.sin(xs[:, 0]), predict(model, xs).mean))

    def test_anchor_rows_exact(self):
        machines = toy_machines()
        model, _ = distgp.run_single_center(machines, "persym", 6, SE, noise_variance=0.1, fit=False)
        K = machines[0].n
        exact = gram_matrix(SE, machines[0].local_inputs, model.train_inputs)
        assert np.max(np.abs(model.gram[:K] - exact)) <= 1e-8

    def test_broadcast_identical_machines_lossless(self):
        base = toy_machines(m=1)[0]
        twins = [distgp.Machine(i, base.local_inputs, base.local_targets) for i in range(2)]
        models, ledger = distgp.run_broadcast(twins, "lossless", 0, SE, noise_variance=0.1, fit=False)
        full, _ = distgp.run_full(twins, SE, noise_variance=0.1, fit=False)
        xs = np.random.default_rng(2).standard_normal((6, 3))
        for m in models:
            assert np.allclose(predict(m, xs).mean, predict(full, xs).mean, atol=1e-10)
        fused = distgp.predict_broadcast(models, xs, ledger)
        assert np.allclose(fused.mean, predict(full, xs).mean, atol=1e-10)
        assert ledger.by_kind()["predictive"] == 128 * 6

    def test_broadcast_ledger_counts_each_payload_once(self):
        machines = toy_machines()
        _, ledger = distgp.run_broadcast(machines, "persym", 5, SE, noise_variance=0.1, fit=False)
        d = machines[0].dim
        payload = sum(5 * m.n for m in machines)
        headers = len(machines) * (16 + 64 + 8 * d)
        covs = len(machines) * 64 * d * (d + 1) // 2
        targets = sum(64 * m.n for m in machines)
        assert ledger.total == payload + headers + covs + targets

    def test_deterministic(self):
        runs = [distgp.run_single_center(toy_machines(), "persym", 9, "se", max_iters=20) for _ in range(2)]
        (m1, l1), (m2, l2) = runs
        assert l1.as_list() == l2.as_list()
        assert np.array_equal(m1.gram, m2.gram)
        assert m1.kernel == m2.kernel

    def test_gram_error_nonincreasing_in_rate(self):
        rates = [0, 3, 6, 12, 24]
        errors = []
        for seed in range(10):
            machines = toy_machines(seed)
            X = np.vstack([m.local_inputs for m in machines])
            G = gram_matrix(SE, X)
            row = []
            for r in rates:
                model, _ = distgp.run_single_center(machines, "persym", r, SE, noise_variance=0.1, fit=False)
                row.append(np.linalg.norm(model.gram - G))
            errors.append(row)
        med = np.median(np.array(errors), axis=0)
        assert np.all(np.diff(med) <= 0)

    def test_needs_two_machines(self):
        with pytest.raises(ValueError):
            distgp.run_single_center(toy_machines(m=1), "persym", 4, SE)
        with pytest.raises(ValueError):
            distgp.run_broadcast(toy_machines(m=1), "persym", 4, SE)
