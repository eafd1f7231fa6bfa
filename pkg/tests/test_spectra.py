import numpy as np
import pytest

from breakeven.errors import (
    DegenerateProjectionError,
    InsufficientCheckpointsError,
    InsufficientDataError,
    RankDeficientError,
)
from breakeven.linalg import DenseSymmetric, jacobi_eigh
from breakeven.netmodel import Batch, MlpSpec, grad, init_params
from breakeven.spectra import (
    GramMatrix,
    grad_subspace_ratio,
    gram_from_gradients,
    hessian_spectrum,
    k_spectrum,
    k_top_eigvecs,
    m_sensitivity_report,
    pearson,
    sample_minibatch_gradients,
)


def dense_covariance_eigs(grads, gbar):
    centered = grads - gbar
    cov = centered.T @ centered / grads.shape[0]
    return jacobi_eigh(DenseSymmetric.from_array(cov)).eigenvalues


def random_grads(L, D, seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((L, D))
    return g, g.mean(axis=0)


class TestGram:
    def test_identical_gradients_zero_matrix(self):
        g = np.tile(np.arange(4.0), (3, 1))
        gram = gram_from_gradients(g, g.mean(axis=0))
        assert np.array_equal(gram.entries, np.zeros((3, 3)))

    def test_antipodal_pair_hand_computation(self):
        v = np.array([1.0, 2.0, -1.0])
        g = np.vstack([v, -v])
        gram = gram_from_gradients(g, np.zeros(3))
        nsq = float(v @ v)
        expected = np.array([[nsq / 2, -nsq / 2], [-nsq / 2, nsq / 2]])
        assert np.allclose(gram.entries, expected, atol=1e-14)
        eigs = jacobi_eigh(DenseSymmetric.from_array(gram.entries)).eigenvalues
        assert np.allclose(eigs, [nsq, 0.0], atol=1e-12)

    def test_exact_symmetry(self):
        g, gbar = random_grads(6, 40, 0)
        gram = gram_from_gradients(g, gbar)
        assert np.array_equal(gram.entries, gram.entries.T)

    @pytest.mark.parametrize("seed", range(5))
    def test_nonzero_spectrum_matches_dense_covariance(self, seed):
        rng = np.random.default_rng(seed)
        L, D = rng.integers(3, 8), rng.integers(10, 41)
        g, gbar = random_grads(int(L), int(D), 100 + seed)
        gram = gram_from_gradients(g, gbar)
        gram_eigs = jacobi_eigh(DenseSymmetric.from_array(gram.entries)).eigenvalues
        dense_eigs = dense_covariance_eigs(g, gbar)
        k = min(len(gram_eigs), len(dense_eigs))
        assert np.max(np.abs(gram_eigs[:k][gram_eigs[:k] > 1e-12] - dense_eigs[: np.sum(gram_eigs[:k] > 1e-12)])) < 1e-10

    def test_row_sums_vanish_with_sample_mean(self):
        g, gbar = random_grads(8, 30, 3)
        gram = gram_from_gradients(g, gbar)
        fro = np.linalg.norm(gram.entries)
        assert np.max(np.abs(gram.entries.sum(axis=1))) < 1e-10 * max(fro, 1.0)


class TestKSpectrum:
    def test_zero_gram(self):
        summary = k_spectrum(GramMatrix(entries=np.zeros((4, 4))))
        assert summary.lambda_k1 == 0.0
        assert summary.lambda_k_star == 0.0
        assert summary.trace_k == 0.0
        assert summary.cond_ratio is None

    def test_isotropic_nonzero_block(self):
        # eigenvalues {0, 2, 2, 2}
        q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((4, 4)))
        a = q @ np.diag([0.0, 2.0, 2.0, 2.0]) @ q.T
        summary = k_spectrum(GramMatrix(entries=(a + a.T) / 2))
        assert summary.lambda_k1 == pytest.approx(2.0, abs=1e-10)
        assert summary.lambda_k_star == pytest.approx(2.0, abs=1e-10)
        assert summary.cond_ratio == pytest.approx(1.0, abs=1e-9)
        assert summary.trace_k == pytest.approx(6.0, abs=1e-10)

    def test_trace_identity(self):
        g, gbar = random_grads(7, 25, 9)
        gram = gram_from_gradients(g, gbar)
        summary = k_spectrum(gram)
        assert summary.trace_k == pytest.approx(np.sum(summary.gram_eigenvalues), rel=1e-9)
        # (1/L) sum ||g_i - gbar||^2 equals the trace by construction
        total = np.sum((g - gbar) ** 2) / g.shape[0]
        assert summary.trace_k == pytest.approx(total, rel=1e-12)

    def test_ordering_invariants(self):
        g, gbar = random_grads(9, 30, 5)
        summary = k_spectrum(gram_from_gradients(g, gbar))
        nonzero = summary.gram_eigenvalues[summary.gram_eigenvalues > 1e-12]
        assert summary.lambda_k_star <= np.mean(nonzero) <= summary.lambda_k1
        assert 0 < summary.cond_ratio <= 1

    def test_permutation_invariance_bitwise(self):
        g, gbar = random_grads(6, 20, 7)
        perm = np.random.default_rng(0).permutation(6)
        a = k_spectrum(gram_from_gradients(g, gbar))
        b = k_spectrum(gram_from_gradients(g[perm], gbar))
        assert np.array_equal(a.gram_eigenvalues, b.gram_eigenvalues)
        assert a.lambda_k1 == b.lambda_k1
        assert a.trace_k == b.trace_k


class TestTopEigvecs:
    def test_antipodal_single_direction(self):
        v = np.array([3.0, 4.0, 0.0])
        g = np.vstack([v, -v])
        gram = gram_from_gradients(g, np.zeros(3))
        vecs = k_top_eigvecs(g, np.zeros(3), gram, k=1)
        assert np.allclose(np.abs(vecs[:, 0]), np.abs(v) / 5.0, atol=1e-12)

    def test_ambient_eigen_residual_vs_dense(self):
        g, gbar = random_grads(8, 50, 11)
        gram = gram_from_gradients(g, gbar)
        vecs = k_top_eigvecs(g, gbar, gram, k=5)
        centered = g - gbar
        cov = centered.T @ centered / g.shape[0]
        eigs = k_spectrum(gram).gram_eigenvalues[:5]
        for lam, v in zip(eigs, vecs.T):
            assert np.linalg.norm(cov @ v - lam * v) < 1e-8
        ortho = vecs.T @ vecs
        assert np.max(np.abs(ortho - np.eye(5))) < 1e-8

    def test_duplicated_sample_spectrum_consistent(self):
        g, _ = random_grads(5, 30, 13)
        g = np.vstack([g, g[0]])  # duplicate one sample
        gbar = g.mean(axis=0)
        gram = gram_from_gradients(g, gbar)
        gram_eigs = k_spectrum(gram).gram_eigenvalues
        dense = dense_covariance_eigs(g, gbar)
        nz = gram_eigs[gram_eigs > 1e-12]
        assert np.max(np.abs(nz - dense[: nz.size])) < 1e-10

    def test_rank_deficient(self):
        v = np.array([1.0, 0.0])
        g = np.vstack([v, -v, v, -v])
        gram = gram_from_gradients(g, np.zeros(2))
        with pytest.raises(RankDeficientError):
            k_top_eigvecs(g, np.zeros(2), gram, k=2)


class TestSubspaceRatio:
    def test_in_span_gives_one(self):
        basis, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((10, 3)))
        g = basis @ np.array([1.0, -2.0, 0.5])
        assert grad_subspace_ratio(g, basis) == pytest.approx(1.0, abs=1e-12)

    def test_45_degrees_gives_sqrt2(self):
        basis = np.array([[1.0], [0.0]])
        g = np.array([1.0, 1.0])
        assert grad_subspace_ratio(g, basis) == pytest.approx(np.sqrt(2.0), abs=1e-14)

    def test_matches_gram_schmidt_projection(self):
        rng = np.random.default_rng(4)
        basis, _ = np.linalg.qr(rng.standard_normal((20, 4)))
        g = rng.standard_normal(20)
        manual = np.zeros(20)
        for b in basis.T:
            manual += np.dot(g, b) * b
        expected = np.linalg.norm(g) / np.linalg.norm(manual)
        assert grad_subspace_ratio(g, basis) == pytest.approx(expected, abs=1e-10)

    def test_always_at_least_one(self):
        rng = np.random.default_rng(6)
        basis, _ = np.linalg.qr(rng.standard_normal((15, 5)))
        for _ in range(20):
            assert grad_subspace_ratio(rng.standard_normal(15), basis) >= 1.0

    def test_orthogonal_gradient_degenerate(self):
        basis = np.array([[1.0], [0.0]])
        with pytest.raises(DegenerateProjectionError):
            grad_subspace_ratio(np.array([0.0, 1.0]), basis)


class TestSampleMinibatchGradients:
    def test_full_batch_size_gives_identical_gradients_and_zero_gram(self):
        spec = MlpSpec(layer_sizes=(3, 6, 2), activation="tanh", seed=2)
        theta = init_params(spec)
        rng = np.random.default_rng(3)
        data = Batch(inputs=rng.standard_normal((12, 3)), labels=rng.integers(0, 2, size=12))
        grads, gbar = sample_minibatch_gradients(spec, theta, data, n_batches=4, batch_size=12, seed=0)
        assert np.allclose(grads, grads[0], atol=1e-15)
        gram = gram_from_gradients(grads, gbar)
        assert np.max(np.abs(gram.entries)) < 1e-20

    def test_oversized_batch_rejected(self):
        spec = MlpSpec(layer_sizes=(2, 4, 2), seed=0)
        data = Batch(inputs=np.zeros((3, 2)), labels=np.array([0, 1, 0]))
        with pytest.raises(InsufficientDataError):
            sample_minibatch_gradients(spec, init_params(spec), data, 3, 4, seed=0)

    def test_sample_mean_is_unbiased_for_full_gradient(self):
        spec = MlpSpec(layer_sizes=(2, 4, 2), activation="tanh", seed=5)
        theta = init_params(spec)
        rng = np.random.default_rng(8)
        data = Batch(inputs=rng.standard_normal((24, 2)), labels=rng.integers(0, 2, size=24))
        exact = grad(spec, theta, data)
        means = np.zeros_like(exact)
        n_seeds = 300
        for s in range(n_seeds):
            _, gbar = sample_minibatch_gradients(spec, theta, data, n_batches=4, batch_size=6, seed=s)
            means += gbar
        means /= n_seeds
        # per-coordinate sampling std of the estimate, within 4 sigma
        spread = np.std(
            [sample_minibatch_gradients(spec, theta, data, 4, 6, seed=1000 + s)[1] for s in range(50)],
            axis=0,
        )
        tol = 4.0 * (spread / np.sqrt(n_seeds) + 1e-12)
        assert np.all(np.abs(means - exact) <= tol)


class TestHessianSpectrum:
    def test_linear_mse_matches_analytic(self):
        spec = MlpSpec(layer_sizes=(2, 1), loss="mse")
        theta = np.array([0.3, -0.7, 0.1])
        rng = np.random.default_rng(0)
        x = rng.standard_normal((6, 2))
        data = Batch(inputs=x, labels=np.zeros((6, 1)))
        xb = np.hstack([x, np.ones((6, 1))])  # (w1, w2, b) design
        analytic = 2.0 * xb.T @ xb / 6.0
        lam = jacobi_eigh(DenseSymmetric.from_array(analytic)).eigenvalues
        hs = hessian_spectrum(spec, theta, data, k=3, method="pearlmutter", max_iters=3, seed=1)
        assert np.max(np.abs(hs.eigenvalues - lam)) < 1e-8

    def test_loss_scaling_scales_eigenvalues(self):
        from breakeven.linalg import LinearOperator, lanczos_topk
        from breakeven.netmodel import hessian_operator

        spec = MlpSpec(layer_sizes=(2, 5, 3), activation="tanh", seed=4)
        theta = init_params(spec)
        rng = np.random.default_rng(1)
        data = Batch(inputs=rng.standard_normal((10, 2)), labels=rng.integers(0, 3, size=10))
        base = hessian_spectrum(spec, theta, data, k=3, max_iters=30, seed=2)
        op = hessian_operator(spec, theta, data, method="pearlmutter")
        scaled = LinearOperator(dim=op.dim, apply=lambda v: 3.0 * op.apply(v))
        top = lanczos_topk(scaled, k=3, max_iters=30, seed=2).eigenvalues
        assert np.max(np.abs(top - 3.0 * base.eigenvalues)) < 1e-8 * max(1.0, top[0])

    def test_pearlmutter_vs_fd_top_eigenvalue(self):
        spec = MlpSpec(layer_sizes=(3, 8, 3), activation="relu", seed=6)
        theta = init_params(spec)
        rng = np.random.default_rng(2)
        data = Batch(inputs=rng.standard_normal((20, 3)), labels=rng.integers(0, 3, size=20))
        a = hessian_spectrum(spec, theta, data, k=1, method="pearlmutter", max_iters=30, seed=3)
        b = hessian_spectrum(spec, theta, data, k=1, method="fd", max_iters=30, seed=3)
        assert abs(a.eigenvalues[0] - b.eigenvalues[0]) < 1e-3 * abs(a.eigenvalues[0])


class TestPearsonAndMSensitivity:
    def test_pearson_formula(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        y = np.array([2.0, 4.0, 6.0, 8.0])
        assert pearson(x, y) == pytest.approx(1.0, abs=1e-15)
        assert pearson(x, -y) == pytest.approx(-1.0, abs=1e-15)
        assert pearson(x, np.ones(4)) is None

    def test_report_constant_series_gives_null(self):
        spec = MlpSpec(layer_sizes=(2, 4, 2), activation="tanh", seed=1)
        theta = init_params(spec)
        one = np.array([[0.5, -0.5]])
        data = Batch(inputs=np.repeat(one, 8, axis=0), labels=np.zeros(8, dtype=np.int64))
        thetas = [theta] * 10
        report = m_sensitivity_report(spec, thetas, data, seed=0, m_values=(1, 4), samples_times_batch=8)
        assert report.pearson_r is None

    def test_report_needs_ten_checkpoints(self):
        spec = MlpSpec(layer_sizes=(2, 4, 2), seed=1)
        data = Batch(inputs=np.zeros((8, 2)), labels=np.zeros(8, dtype=np.int64))
        with pytest.raises(InsufficientCheckpointsError):
            m_sensitivity_report(spec, [init_params(spec)] * 5, data, seed=0, m_values=(1, 4))
