import numpy as np
import pytest

from crclassify.errors import ShapeError
from crclassify.gram import DataMatrix, LabelVector, build_gram, center_columns
from crclassify.dense import fit_crcl, loo_scores_crcl, score_crcl


def make_case(n, p, seed=0):
    rng = np.random.default_rng(seed)
    dm = center_columns(rng.standard_normal((n, p)))
    labels = np.repeat([-1.0, 1.0], (n // 2, n - n // 2))
    t = LabelVector.from_values(rng.permutation(labels))
    return dm, t, build_gram(dm)


def explicit_component_lda_score(dm, t, fill, z):
    """Brute-force oracle: project onto all right singular vectors and
    run LDA there, raising the deficient singular values to the fill
    before anything is inverted.  Follows the component-space chain
    (class means, pooled covariance, nullspace projector, augmented
    covariance) literally, in n-dimensional space."""
    n = dm.n
    u, svals, _ = np.linalg.svd(dm.values, full_matrices=False)
    d2 = svals**2
    order = np.argsort(d2)[::-1]
    u = u[:, order]
    d2 = d2[order]
    d2aug = np.where(d2 < 1e-10 * d2[0], fill, d2)
    x = u * np.sqrt(d2aug)  # training data in augmented component space
    y = t.indicator()
    counts = y.sum(axis=0)
    mu = (y.T @ x) / counts[:, None]  # class means, rows: class 1, class 2
    sigma = (x - y @ mu).T @ (x - y @ mu) / n
    xinv_y = np.linalg.solve(x, y)
    proj = xinv_y @ np.linalg.solve(xinv_y.T @ xinv_y, xinv_y.T)
    sigma_aug = sigma + fill * proj
    beta = np.linalg.solve(sigma_aug, mu[1] - mu[0])
    # target coordinates under the same augmented geometry
    x_target = (z @ dm.values.T) @ (u / np.sqrt(d2aug))
    return float(x_target @ beta)


class TestFitScore:
    def test_matches_explicit_pc_lda(self):
        for seed in range(5):
            dm, t, g = make_case(6, 40, seed=seed)
            model = fit_crcl(g, dm, t)
            z = np.random.default_rng(100 + seed).standard_normal(40)
            got = score_crcl(model, z)
            want = explicit_component_lda_score(dm, t, g.fill_value, z)
            assert got == pytest.approx(want, rel=1e-5)

    def test_augmented_covariance_annihilates_nullspace(self):
        # The pooled component-space covariance kills the directions
        # spanned by the solved class indicator.
        dm, t, g = make_case(8, 30, seed=6)
        u = g.eigenvectors
        x = u * np.sqrt(g.augmented_eigenvalues)
        y = t.indicator()
        counts = y.sum(axis=0)
        mu = (y.T @ x) / counts[:, None]
        sigma = (x - y @ mu).T @ (x - y @ mu) / dm.n
        null_dirs = np.linalg.solve(x, y)
        np.testing.assert_allclose(sigma @ null_dirs, 0.0, atol=1e-8 * np.abs(sigma).max())

    def test_right_orthogonal_invariance(self):
        dm, t, g = make_case(7, 35, seed=7)
        rng = np.random.default_rng(8)
        q, _ = np.linalg.qr(rng.standard_normal((35, 35)))
        dm2 = DataMatrix.from_centered(dm.values @ q)
        g2 = build_gram(dm2)
        m1 = fit_crcl(g, dm, t)
        m2 = fit_crcl(g2, dm2, t)
        z = rng.standard_normal(35)
        assert score_crcl(m1, z) == pytest.approx(score_crcl(m2, z @ q), rel=1e-8)

    def test_antisymmetric_scores(self):
        # Mirrored two-cluster data, slightly noised so the spectrum
        # stays usable; scoring is linear, so opposite probes get
        # opposite scores.
        rng = np.random.default_rng(9)
        z = rng.standard_normal(20)
        w = rng.standard_normal(20)
        rows = np.vstack([z, -z, w, -w, z + w, -(z + w)])
        rows += 0.05 * rng.standard_normal(rows.shape)
        dm = center_columns(rows)
        t = LabelVector.from_values([1, -1, 1, -1, 1, -1])
        g = build_gram(dm)
        model = fit_crcl(g, dm, t)
        probe = rng.standard_normal(20)
        assert score_crcl(model, probe) == pytest.approx(-score_crcl(model, -probe))

    def test_zero_target_scores_zero(self):
        dm, t, g = make_case(6, 25, seed=10)
        model = fit_crcl(g, dm, t)
        assert score_crcl(model, np.zeros(25)) == 0.0

    def test_orthogonal_target_scores_zero(self):
        rng = np.random.default_rng(11)
        basis, _ = np.linalg.qr(rng.standard_normal((30, 7)))
        dm = DataMatrix.from_centered(basis.T[:6])
        t = LabelVector.from_values([-1, 1, -1, 1, -1, 1])
        g = build_gram(dm)
        model = fit_crcl(g, dm, t)
        assert score_crcl(model, basis.T[6]) == pytest.approx(0.0, abs=1e-12)

    def test_score_shape_error(self):
        dm, t, g = make_case(6, 25, seed=12)
        model = fit_crcl(g, dm, t)
        with pytest.raises(ShapeError):
            score_crcl(model, np.zeros(26))

    def test_feature_offset_invariance(self):
        # Adding a constant to one feature column washes out after
        # re-centering.
        rng = np.random.default_rng(13)
        raw = rng.standard_normal((8, 30))
        labels = [-1, 1] * 4
        dm1 = center_columns(raw)
        shifted = raw.copy()
        shifted[:, 4] += 17.0
        dm2 = center_columns(shifted)
        t = LabelVector.from_values(labels)
        m1 = fit_crcl(build_gram(dm1), dm1, t)
        m2 = fit_crcl(build_gram(dm2), dm2, t)
        z = rng.standard_normal(30)
        z_shifted = z.copy()
        z_shifted[4] += 17.0  # observations from the shifted world carry the offset
        s1 = score_crcl(m1, z - dm1.mu_hat)
        s2 = score_crcl(m2, z_shifted - dm2.mu_hat)
        assert s1 == pytest.approx(s2, rel=1e-8)


class TestLooScores:
    def test_matches_submatrix_rebuild(self):
        # Oracle: score row i with a dense fit built from the fold
        # matrix (augmented-Gram submatrix), holding the fill fixed.
        dm, t, g = make_case(10, 60, seed=14)
        scores = loo_scores_crcl(g, dm, t)
        for i in range(10):
            keep = np.arange(10) != i
            gram_f = g.augmented_gram[np.ix_(keep, keep)]
            inv_f = np.linalg.inv(gram_f)
            y = t.indicator()[keep]
            counts = y.sum(axis=0)
            m = dm.n - 1
            ryg = gram_f - y @ ((y.T @ gram_f) / counts[:, None])
            hy = inv_f @ y
            inner = ryg / m + g.fill_value * hy @ np.linalg.solve(y.T @ hy, y.T)
            rhs = y @ (np.array([-1.0, 1.0]) / counts)
            mvec = np.linalg.solve(inner, rhs)
            expected = g.gram[i, keep] @ mvec
            assert scores[i] == pytest.approx(expected, rel=1e-6)

    def test_separable_degenerate_geometry(self):
        # Two tight, well-separated clusters: every leave-one-out dense
        # score lands on the correct side.
        rng = np.random.default_rng(15)
        mu = rng.standard_normal(30) * 5
        rows = np.vstack([
            -mu + 0.01 * rng.standard_normal((5, 30)),
            mu + 0.01 * rng.standard_normal((5, 30)),
        ])
        dm = center_columns(rows)
        t = LabelVector.from_values([-1] * 5 + [1] * 5)
        g = build_gram(dm)
        scores = loo_scores_crcl(g, dm, t)
        assert np.all(np.sign(scores) == t.values)

    def test_permutation_equivariance(self):
        dm, t, g = make_case(8, 40, seed=16)
        scores = loo_scores_crcl(g, dm, t)
        perm = np.random.default_rng(17).permutation(8)
        dm2 = DataMatrix(values=dm.values[perm], centered=True, mu_hat=dm.mu_hat)
        t2 = LabelVector.from_values(t.values[perm])
        scores2 = loo_scores_crcl(build_gram(dm2), dm2, t2)
        np.testing.assert_allclose(scores2, scores[perm], rtol=1e-8)

    def test_held_out_accuracy_tracks_bayes_on_latent_model(self):
        # Desk-scale check of the dense component's strength when the
        # factors carry label signal (p shrunk for speed; the full-p
        # version lives in the acceptance suite).
        from crclassify.simulator import SimConfig, generate

        accs = []
        for rep in range(3):
            ds = generate(SimConfig(model="correlated", n=200, p=2000,
                                    alpha_seed=rep, data_seed=50 + rep))
            dm = center_columns(ds.features)
            t = LabelVector.from_values(ds.labels)
            g = build_gram(dm)
            model = fit_crcl(g, dm, t)
            test = generate(SimConfig(model="correlated", n=500, p=2000,
                                      alpha_seed=rep, data_seed=90 + rep))
            s = score_crcl(model, test.features - dm.mu_hat)
            accs.append(np.mean(np.where(s - model.intercept >= 0, 1, -1) == test.labels))
        assert np.mean(accs) >= 0.75
