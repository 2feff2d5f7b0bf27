import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import tiny_image_vae, tiny_rna_vae
from latentbridge.alignment import JointModel
from latentbridge.errors import NumericalError, ShapeError, UsageError
from latentbridge.trajectory import (
    endpoint_anchors,
    expression_kinetics,
    gp_fit,
    gp_predict,
    interpolate_classes,
    rbf_kernel,
    rbf_matrix,
)


def direct_gp(x, y, q, sigma, jitter):
    """Textbook posterior by explicit linear solves."""
    k = np.exp(-np.subtract.outer(x, x) ** 2 / (2 * sigma ** 2)) + jitter * np.eye(len(x))
    ks = np.exp(-np.subtract.outer(x, q) ** 2 / (2 * sigma ** 2))
    kss = np.exp(-np.subtract.outer(q, q) ** 2 / (2 * sigma ** 2))
    return ks.T @ np.linalg.solve(k, y), kss - ks.T @ np.linalg.solve(k, ks)


def spaced_problem(seed, sigma=0.5):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(2, 21)), int(rng.integers(1, 11))
    x = np.cumsum(rng.uniform(0.6 * sigma, 2 * sigma, n))
    rng.shuffle(x)
    return x, rng.normal(size=(n, d)), rng.uniform(x.min() - 1, x.max() + 1, 12)


class TestKernel:
    def test_values(self):
        assert rbf_kernel(0.3, 0.3, 0.5) == 1.0
        assert rbf_kernel(0.0, 1.0, 1.0) == pytest.approx(np.exp(-0.5), abs=1e-15)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.05, 3))
    def test_symmetric_and_bounded(self, a, b, s):
        k = rbf_kernel(a, b, s)
        assert k == rbf_kernel(b, a, s) and 0.0 <= k <= 1.0

    def test_bad_sigma(self):
        with pytest.raises(UsageError):
            rbf_kernel(0, 1, 0.0)
        with pytest.raises(UsageError):
            rbf_matrix([0], [1], -1)

    def test_matrix_psd(self):
        x = np.random.default_rng(0).random(15)
        assert np.linalg.eigvalsh(rbf_matrix(x, x, 0.5)).min() > -1e-12


class TestGp:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_direct_solve(self, seed):
        x, y, q = spaced_problem(seed)
        pred = gp_predict(gp_fit(x, y, 0.5, 1e-8), q)
        mean, cov = direct_gp(x, y, q, 0.5, 1e-8)
        np.testing.assert_allclose(pred.mean, mean, atol=1e-8, rtol=0)
        np.testing.assert_allclose(pred.covariance, cov, atol=1e-8, rtol=0)

    def test_interpolates_targets(self):
        x, y, _ = spaced_problem(3)
        np.testing.assert_allclose(gp_predict(gp_fit(x, y), x).mean, y, atol=1e-6, rtol=0)

    def test_two_point_endpoints(self):
        y = np.array([[1.0, -2.0], [3.0, 0.5]])
        pred = gp_predict(gp_fit([0.0, 1.0], y), [0.0, 1.0])
        np.testing.assert_allclose(pred.mean, y, atol=1e-6)

    def test_covariance_symmetric_and_small_at_inputs(self):
        x, y, q = spaced_problem(4)
        cov = gp_predict(gp_fit(x, y), np.concatenate([x, q])).covariance
        assert np.array_equal(cov, cov.T)
        assert np.abs(np.diag(cov)[:len(x)]).max() < 1e-6

    def test_far_from_data_reverts_to_prior(self):
        pred = gp_predict(gp_fit([0.0, 1.0], [[1.0], [2.0]]), [100.0])
        assert abs(pred.mean[0, 0]) < 1e-12 and pred.covariance[0, 0] == pytest.approx(1.0)

    def test_input_order_irrelevant(self):
        x, y, q = spaced_problem(5)
        perm = np.random.default_rng(0).permutation(len(x))
        a = gp_predict(gp_fit(x, y), q).mean
        b = gp_predict(gp_fit(x[perm], y[perm]), q).mean
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_errors(self):
        with pytest.raises(UsageError):
            gp_fit([0.5], [[1.0]])
        with pytest.raises(UsageError):
            gp_fit([0.0, 0.0], [[1.0], [2.0]])
        with pytest.raises(ShapeError):
            gp_fit([0.0, 1.0], [[1.0]])

    def test_cholesky_failure_is_numerical(self):
        # essentially coincident inputs and an unhelpful jitter
        with pytest.raises(NumericalError, match="jitter"):
            gp_fit(np.linspace(0, 1e-9, 5), np.zeros((5, 1)), sigma=10.0, jitter=1e-30)


class TestInterpolation:
    def _model(self):
        return JointModel(tiny_image_vae(seed=1), tiny_rna_vae(seed=2, latent_dim=2), [0, 1])

    def _emb(self):
        rng = np.random.default_rng(6)
        return {0: rng.normal(-1, 0.2, (10, 2)), 1: rng.normal(1, 0.2, (12, 2))}

    def test_centroid_endpoints(self):
        emb = self._emb()
        traj = interpolate_classes(self._model(), 0, 1, emb, steps=20)
        assert traj.latent_points.shape == (20, 2)
        assert traj.decoded_images.shape == (20, 3, 3, 3)
        assert traj.decoded_expression.shape == (20, 6)
        np.testing.assert_allclose(traj.latent_points[0], emb[0].mean(0), atol=1e-6)
        np.testing.assert_allclose(traj.latent_points[-1], emb[1].mean(0), atol=1e-6)
        assert expression_kinetics(traj).shape == (6, 20)

    def test_same_class_is_constant(self):
        emb = self._emb()
        emb[2] = emb[0]
        traj = interpolate_classes(self._model(), 0, 2, emb)
        # both ends equal: the posterior mean is a scaled copy of the centroid
        assert np.linalg.matrix_rank(traj.latent_points, tol=1e-9) == 1

    def test_sample_mode_uses_distinct_times(self):
        emb = self._emb()
        t, pts = endpoint_anchors(emb[0], emb[1], 4, rng=0)
        assert len(np.unique(t)) == 8 and t.min() == 0.0 and t.max() == 1.0
        traj = interpolate_classes(self._model(), 0, 1, emb, anchors_per_class=3, seed=1,
                                   sample_posterior=True)
        assert np.all(np.isfinite(traj.latent_points))

    def test_unknown_class(self):
        with pytest.raises(UsageError, match="unknown class"):
            interpolate_classes(self._model(), 0, 7, self._emb())

    def test_steps(self):
        with pytest.raises(UsageError):
            interpolate_classes(self._model(), 0, 1, self._emb(), steps=1)


class TestExamples:
    def test_two_point_kernel(self):
        m = gp_fit([0.0, 1.0], [[0.0], [1.0]], sigma=0.5, jitter=1e-8)
        k = np.exp(-1 / (2 * 0.25))
        want = np.linalg.cholesky([[1 + 1e-8, k], [k, 1 + 1e-8]])
        np.testing.assert_allclose(m.cholesky_factor, want, atol=1e-15)

    def test_refit_identical(self):
        x, y, _ = spaced_problem(7)
        assert gp_fit(x, y).cholesky_factor.tobytes() == gp_fit(x, y).cholesky_factor.tobytes()

    def test_midpoint_symmetry(self):
        y = np.array([[2.0, -1.0], [4.0, 3.0]])
        pred = gp_predict(gp_fit([0.0, 1.0], y), [0.5]).mean[0]
        k_half = np.exp(-0.25 / (2 * 0.25))
        k01 = np.exp(-1 / (2 * 0.25))
        c = k_half / (1 + 1e-8 + k01)
        np.testing.assert_allclose(pred, c * (y[0] + y[1]), atol=1e-12)

    def test_two_steps(self):
        emb = TestInterpolation()._emb()
        traj = interpolate_classes(TestInterpolation()._model(), 0, 1, emb, steps=2)
        np.testing.assert_allclose(traj.latent_points, [emb[0].mean(0), emb[1].mean(0)], atol=1e-6)

    def test_kinetics_transpose(self):
        from latentbridge.trajectory import Trajectory

        expr = np.arange(6.0).reshape(3, 2)
        traj = Trajectory(np.linspace(0, 1, 3), np.zeros((3, 2)), np.zeros((3, 1, 1, 3)), expr)
        k = expression_kinetics(traj)
        assert k.shape == (2, 3) and np.array_equal(k.T, expr)

    def test_constant_path_constant_genes(self):
        model = TestInterpolation()._model()
        traj = interpolate_classes(model, 0, 1, {0: np.zeros((3, 2)), 1: np.zeros((3, 2))}, steps=5)
        kin = expression_kinetics(traj)
        assert np.all(kin == kin[:, :1])

    def test_path_continuity(self):
        emb = TestInterpolation()._emb()
        model = TestInterpolation()._model()
        steps = [np.linalg.norm(np.diff(interpolate_classes(model, 0, 1, emb, steps=t).latent_points,
                                        axis=0), axis=1).max() for t in (21, 41)]
        assert steps[1] == pytest.approx(steps[0] / 2, rel=0.2)
