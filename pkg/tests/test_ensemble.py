import dataclasses

import numpy as np
import pytest

from crclassify.errors import (
    CorruptModel,
    CrcError,
    NonFiniteInput,
    ShapeError,
    TooFewSamples,
    VersionMismatch,
)
from crclassify.ensemble import (
    deserialize,
    extract_linear_weights,
    fit_crc,
    load_model,
    predict,
    predict_batch,
    save_model,
    serialize,
)
from crclassify.simulator import SimConfig, generate


@pytest.fixture(scope="module")
def fitted():
    ds = generate(SimConfig(model="correlated", n=40, p=300,
                            alpha_seed=1, data_seed=2))
    return ds, fit_crc(ds.features, ds.labels, seed=7)


class TestFit:
    def test_too_few_samples(self):
        rng = np.random.default_rng(3)
        with pytest.raises(TooFewSamples):
            fit_crc(rng.standard_normal((6, 20)), [-1, -1, -1, 1, 1, 1])

    def test_class_minimum(self):
        rng = np.random.default_rng(4)
        labels = [-1, -1, -1, 1, 1, 1, 1, 1]
        with pytest.raises(TooFewSamples):
            fit_crc(rng.standard_normal((8, 20)), labels)

    def test_duplicated_rows_fail_loudly(self):
        # Duplicating every row drives more than half the spectrum to
        # zero; the fit refuses rather than returning a degenerate
        # model.
        ds = generate(SimConfig(model="simple", n=10, p=50,
                                alpha_seed=5, data_seed=6))
        doubled = np.repeat(ds.features, 2, axis=0)
        labels = np.repeat(ds.labels, 2)
        with pytest.raises(CrcError):
            fit_crc(doubled, labels)

    def test_loo_pairs_reproducible_from_components(self, fitted):
        # The stored leave-one-out score pairs match a fresh run of the
        # component leave-one-out machinery.
        ds, model = fitted
        from crclassify.dense import loo_scores_crcl
        from crclassify.gram import LabelVector, build_gram, center_columns
        from crclassify.residualization import cross_residualize
        from crclassify.sparse import loo_scores_crcs

        dm = center_columns(ds.features)
        t = LabelVector.from_values(ds.labels)
        g = build_gram(dm)
        dense = loo_scores_crcl(g, dm, t)
        xres = cross_residualize(g, dm, t)
        sparse = loo_scores_crcs(xres, t, model.n_features_selected, g, dm)
        np.testing.assert_allclose(model.loo_score_pairs[:, 0], dense, rtol=1e-10)
        np.testing.assert_allclose(model.loo_score_pairs[:, 1], sparse, rtol=1e-10)


class TestPredict:
    def test_batch_equals_single(self, fitted):
        ds, model = fitted
        probes = np.random.default_rng(8).standard_normal((5, 300))
        labels, pairs, combined = predict_batch(model, probes)
        for k in range(5):
            one = predict(model, probes[k])
            assert one.label == labels[k]
            assert one.score_pair == (pytest.approx(pairs[k, 0]), pytest.approx(pairs[k, 1]))
            assert one.combined_score == pytest.approx(combined[k])

    def test_training_mean_scores_zero(self, fitted):
        _, model = fitted
        pred = predict(model, model.mu_hat)
        assert pred.score_pair == (0.0, 0.0)
        assert pred.combined_score == pytest.approx(model.meta.intercept)
        assert pred.label == (1 if model.meta.intercept >= 0 else -1)

    def test_shape_and_finite_checks(self, fitted):
        _, model = fitted
        with pytest.raises(ShapeError):
            predict(model, np.zeros(299))
        bad = np.zeros(300)
        bad[7] = np.inf
        with pytest.raises(NonFiniteInput):
            predict(model, bad)

    def test_label_flip_antisymmetry(self, fitted):
        ds, model = fitted
        flipped = fit_crc(ds.features, -ds.labels, seed=7)
        probes = np.random.default_rng(9).standard_normal((40, 300))
        a, _, ca = predict_batch(model, probes)
        b, _, cb = predict_batch(flipped, probes)
        np.testing.assert_allclose(cb, -ca, rtol=1e-6, atol=1e-9)
        np.testing.assert_array_equal(b, -a)


class TestLinearWeights:
    def test_sign_agreement_on_probes(self, fitted):
        _, model = fitted
        w, b0 = extract_linear_weights(model)
        probes = np.random.default_rng(10).standard_normal((1000, 300))
        labels, _, _ = predict_batch(model, probes)
        linear = np.where(b0 + (probes - model.mu_hat) @ w >= 0, 1, -1)
        np.testing.assert_array_equal(linear, labels)

    def test_pure_dense_weights_lie_in_row_space(self, fitted):
        _, model = fitted
        dense_only = dataclasses.replace(
            model, meta=dataclasses.replace(model.meta, coef_sparse=0.0)
        )
        w, _ = extract_linear_weights(dense_only)
        train = model.training.values
        coeffs, *_ = np.linalg.lstsq(train.T, w, rcond=None)
        np.testing.assert_allclose(train.T @ coeffs, w, atol=1e-8 * np.abs(w).max())

    def test_weight_support_recovers_signal(self):
        # The sparse contribution concentrates on the true non-null
        # coordinates of the class effect.
        hits, total = 0, 0
        for rep in range(3):
            ds = generate(SimConfig(model="simple", n=500, p=2000,
                                    alpha_seed=20 + rep, data_seed=30 + rep))
            model = fit_crc(ds.features, ds.labels)
            w_sparse = np.zeros(2000)
            w_sparse[model.sparse.feature_indices] = model.sparse.weights
            top3 = np.argsort(-np.abs(w_sparse))[:3]
            hits += len(set(top3) & {0, 1, 2})
            total += 3
        assert hits / total >= 2 / 3


class TestSerialization:
    def test_round_trip_bitwise(self, fitted, tmp_path):
        ds, model = fitted
        path = tmp_path / "model.crc"
        save_model(model, path)
        loaded = load_model(path)
        probes = np.random.default_rng(11).standard_normal((20, 300))
        l1, p1, c1 = predict_batch(model, probes)
        l2, p2, c2 = predict_batch(loaded, probes)
        np.testing.assert_array_equal(l1, l2)
        np.testing.assert_array_equal(p1, p2)
        np.testing.assert_array_equal(c1, c2)
        np.testing.assert_array_equal(model.loo_score_pairs, loaded.loo_score_pairs)
        assert loaded.seed == model.seed
        # serializing the reloaded model reproduces the bytes exactly
        assert serialize(loaded) == serialize(model)

    def test_truncated_file_rejected(self, fitted, tmp_path):
        _, model = fitted
        blob = serialize(model)
        with pytest.raises(CorruptModel):
            deserialize(blob[: len(blob) // 2])

    def test_corrupted_payload_rejected(self, fitted):
        _, model = fitted
        blob = bytearray(serialize(model))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(CorruptModel):
            deserialize(bytes(blob))

    def test_unknown_version_rejected(self, fitted):
        _, model = fitted
        blob = bytearray(serialize(model))
        blob[4:8] = (99).to_bytes(4, "little")
        import struct
        import zlib

        body = bytes(blob[:-4])
        blob[-4:] = struct.pack("<I", zlib.crc32(body))
        with pytest.raises(VersionMismatch):
            deserialize(bytes(blob))

    def test_bad_magic_rejected(self):
        with pytest.raises(CorruptModel):
            deserialize(b"NOPE" + b"\x00" * 64)

    def test_deterministic_refit_same_bytes(self):
        ds = generate(SimConfig(model="simple", n=24, p=120,
                                alpha_seed=12, data_seed=13))
        a = serialize(fit_crc(ds.features, ds.labels, seed=5))
        b = serialize(fit_crc(ds.features.copy(), ds.labels.copy(), seed=5))
        assert a == b
