import numpy as np
import pytest

from crclassify.errors import DegenerateContrast, FoldClassEmpty, ShapeError
from crclassify.gram import DataMatrix, LabelVector, build_gram, center_columns
from crclassify.residualization import (
    cross_residualize,
    estimate_class_effect,
    residualize,
)
from crclassify.simulator import SimConfig, generate


def make_case(n, p, seed=0):
    rng = np.random.default_rng(seed)
    dm = center_columns(rng.standard_normal((n, p)))
    labels = np.repeat([-1.0, 1.0], (n // 2, n - n // 2))
    t = LabelVector.from_values(rng.permutation(labels))
    return dm, t, build_gram(dm)


class TestEstimateClassEffect:
    def test_orthonormal_rows_reduce_to_mean_difference(self):
        # Gram = identity makes the estimator the plain least-squares
        # fit of the labels.
        q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((30, 6)))
        dm = DataMatrix.from_centered(q.T[:6])
        t = LabelVector.from_values([-1, -1, -1, 1, 1, 1])
        g = build_gram(dm)
        effect = estimate_class_effect(g, dm, t)
        expected = (t.values / t.n) @ dm.values
        np.testing.assert_allclose(effect.coef, expected, atol=1e-10)

    def test_mean_matches_known_factor_regression(self):
        # Over replicates, the Gram-inverse estimator tracks the least
        # squares fit that sees the true latent factors (light version;
        # the full 100-replicate check lives in the acceptance suite).
        diffs = []
        for rep in range(20):
            ds = generate(SimConfig(model="correlated", n=200, p=2000,
                                    alpha_seed=rep, data_seed=1000 + rep))
            dm = center_columns(ds.features)
            t = LabelVector.from_values(ds.labels)
            g = build_gram(dm)
            est = estimate_class_effect(g, dm, t).coef[:3]
            rl = np.eye(200) - ds.factors @ np.linalg.solve(
                ds.factors.T @ ds.factors, ds.factors.T
            )
            denom = ds.labels @ rl @ ds.labels
            ols = (ds.labels @ rl @ ds.features) / denom
            diffs.append(est - ols[:3])
        np.testing.assert_allclose(np.mean(diffs, axis=0), 0.0, atol=0.1)


class TestResidualize:
    def test_in_row_space_collapses_without_fill(self):
        # Full-rank (uncentered) Gram: a training row residualizes to
        # exactly its label times the effect estimate.
        rng = np.random.default_rng(2)
        dm = DataMatrix.from_centered(rng.standard_normal((6, 40)))
        t = LabelVector.from_values([-1, 1, -1, 1, -1, 1])
        g = build_gram(dm)
        assert not g.deficient.any()
        effect = estimate_class_effect(g, dm, t)
        for i in (0, 3):
            out = residualize(g, dm, t, effect, dm.values[i])
            np.testing.assert_allclose(out, t.values[i] * effect.coef, atol=1e-8)

    def test_in_sample_collapse_balanced_centered(self):
        # With balanced labels the same collapse holds on centered data:
        # the fill-direction correction cancels against the label mean.
        dm, t, g = make_case(8, 60, seed=3)
        effect = estimate_class_effect(g, dm, t)
        out = residualize(g, dm, t, effect, dm.values[2])
        np.testing.assert_allclose(out, t.values[2] * effect.coef, atol=1e-8)

    def test_zero_effect_in_row_space_gives_zero(self):
        rng = np.random.default_rng(4)
        dm = DataMatrix.from_centered(rng.standard_normal((6, 40)))
        t = LabelVector.from_values([-1, 1, -1, 1, -1, 1])
        g = build_gram(dm)
        from crclassify.residualization import ClassEffect

        zero = ClassEffect(coef=np.zeros(40))
        out = residualize(g, dm, t, zero, dm.values[1])
        np.testing.assert_allclose(out, 0.0, atol=1e-8)

    def test_orthogonal_target_passes_through(self):
        rng = np.random.default_rng(5)
        basis, _ = np.linalg.qr(rng.standard_normal((40, 7)))
        dm = DataMatrix.from_centered(basis.T[:6])
        t = LabelVector.from_values([-1, 1, -1, 1, -1, 1])
        g = build_gram(dm)
        effect = estimate_class_effect(g, dm, t)
        z = basis.T[6]  # orthogonal to every training row
        np.testing.assert_allclose(residualize(g, dm, t, effect, z), z, atol=1e-10)

    def test_linear_in_target(self):
        dm, t, g = make_case(10, 50, seed=6)
        effect = estimate_class_effect(g, dm, t)
        rng = np.random.default_rng(7)
        z1, z2 = rng.standard_normal((2, 50))
        f = lambda z: residualize(g, dm, t, effect, z)
        np.testing.assert_allclose(f(z1 + z2), f(z1) + f(z2) - f(np.zeros(50)), atol=1e-9)
        np.testing.assert_allclose(f(np.zeros(50)), 0.0, atol=1e-12)
        np.testing.assert_allclose(f(2.5 * z1), 2.5 * f(z1), atol=1e-9)

    def test_shape_mismatch(self):
        dm, t, g = make_case(6, 20, seed=8)
        effect = estimate_class_effect(g, dm, t)
        with pytest.raises(ShapeError):
            residualize(g, dm, t, effect, np.zeros(21))


class TestCrossResidualize:
    def test_rows_match_direct_formula(self):
        # Oracle: evaluate the leave-one-out formula directly, using
        # the dense inverse of the fill-augmented Gram with row and
        # column i removed (the fill is inherited, never recomputed).
        dm, t, g = make_case(9, 60, seed=9)
        xres = cross_residualize(g, dm, t)
        for i in range(9):
            keep = np.arange(9) != i
            zk = dm.values[keep]
            tk = t.values[keep]
            inv = np.linalg.inv(g.augmented_gram[np.ix_(keep, keep)])
            ht = inv @ tk
            gamma_i = (ht / (tk @ ht)) @ zk
            zi = dm.values[i]
            expected = zi - (zi @ zk.T) @ inv @ (zk - np.outer(tk, gamma_i))
            rel = np.linalg.norm(xres.s_hat[i] - expected) / np.linalg.norm(expected)
            assert rel < 1e-6

    def test_per_row_effect_matches_direct(self):
        dm, t, g = make_case(7, 30, seed=10)
        xres = cross_residualize(g, dm, t)
        i = 4
        keep = np.arange(7) != i
        zk = dm.values[keep]
        tk = t.values[keep]
        inv = np.linalg.inv(g.augmented_gram[np.ix_(keep, keep)])
        ht = inv @ tk
        expected = (ht / (tk @ ht)) @ zk
        np.testing.assert_allclose(xres.row_effect(i).coef, expected, atol=1e-8)
        np.testing.assert_allclose(
            xres.per_row_effects[i].coef, expected, atol=1e-8
        )

    def test_no_rank_one_collapse(self):
        dm, t, g = make_case(12, 80, seed=11)
        s_hat = cross_residualize(g, dm, t).s_hat
        assert np.linalg.matrix_rank(s_hat, tol=1e-8) > 1

    def test_decorrelates_latent_columns(self):
        ds = generate(SimConfig(model="uncorrelated", n=100, p=2000,
                                alpha_seed=12, data_seed=13))
        dm = center_columns(ds.features)
        t = LabelVector.from_values(ds.labels)
        g = build_gram(dm)
        s_hat = cross_residualize(g, dm, t).s_hat
        cols = np.random.default_rng(14).choice(2000, size=50, replace=False)
        def mean_abs_offdiag(m):
            c = np.corrcoef(m[:, cols], rowvar=False)
            off = c[~np.eye(50, dtype=bool)]
            return np.abs(off).mean()
        assert mean_abs_offdiag(s_hat) < 0.5 * mean_abs_offdiag(ds.features)

    def test_preserves_noise_variance(self):
        # No latent factors, unit noise: residualized columns keep
        # their variance instead of collapsing.
        ds = generate(SimConfig(model="simple", n=100, p=2000,
                                alpha_seed=15, data_seed=16))
        dm = center_columns(ds.features)
        t = LabelVector.from_values(ds.labels)
        g = build_gram(dm)
        s_hat = cross_residualize(g, dm, t).s_hat
        variances = s_hat.var(axis=0, ddof=1)
        assert variances.min() > 0.5 and variances.max() < 1.5

    def test_fold_class_empty(self):
        rng = np.random.default_rng(19)
        dm = center_columns(rng.standard_normal((6, 20)))
        values = np.array([-1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
        t = LabelVector.from_values(values, min_per_class=1)
        g = build_gram(dm)
        with pytest.raises(FoldClassEmpty):
            cross_residualize(g, dm, t)

    def test_degenerate_contrast(self):
        q, _ = np.linalg.qr(np.random.default_rng(20).standard_normal((30, 6)))
        dm = DataMatrix.from_centered(q.T[:6])
        t = LabelVector.from_values([-1, 1, -1, 1, -1, 1])
        g = build_gram(dm)
        zero_t = LabelVector(values=np.zeros(6), n1=3, n2=3)  # adversarial contrast
        with pytest.raises(DegenerateContrast):
            estimate_class_effect(g, dm, zero_t)
