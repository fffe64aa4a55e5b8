import csv
from math import comb

import numpy as np
import pytest
import torch

from sigcov import oracle
from sigcov import sigkernel as sk
from sigcov.errors import InvalidInputError
from sigcov.sequences import AugmentedSequence, tabulate
from sigcov.static import StaticKernelParams
from sigcov.verification import random_augmented, random_params, random_tensors, rel_err

LIN = StaticKernelParams("linear")


def lin_params(depth, **kw):
    return sk.SigKernelParams(depth=depth, static=LIN, **kw)


def path(*points):
    return AugmentedSequence(np.asarray(points, dtype=float))


def tensor(z0, *levels):
    return sk.InducingTensor(z0, tuple(np.asarray(l, dtype=float) for l in levels))


Z_E1 = tensor(1.0, [[1, 0]], [[1, 0], [1, 0]])
Z_E2 = tensor(1.0, [[0, 1]], [[0, 1], [0, 1]])


class TestParams:
    def test_defaults_and_sigmas(self):
        p = sk.SigKernelParams(depth=2, sigma_prime=(1.0, 2.0, 3.0), beta=0.5)
        np.testing.assert_array_equal(p.sigmas, [0.5, 1.0, 1.5])

    @pytest.mark.parametrize("kw", [dict(depth=0), dict(depth=2, sigma_prime=(1.0, 1.0)),
                                    dict(depth=1, sigma_prime=(1.0, -1.0)), dict(depth=1, beta=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            sk.SigKernelParams(**kw)

    def test_feature_scales_share_lengthscales_with_lags(self):
        p = sk.SigKernelParams(depth=1, lags=(1.0,), static=StaticKernelParams("rbf", (2.0, 4.0)))
        np.testing.assert_array_equal(p.feature_scales(5), [1.0, 0.5, 0.25, 0.5, 0.25])
        with pytest.raises(InvalidInputError):
            p.feature_scales(3)

    def test_digest_tracks_values(self):
        assert lin_params(2).digest() == lin_params(2).digest()
        assert lin_params(2).digest() != lin_params(2, beta=2.0).digest()


class TestInducingTensor:
    def test_level_sizes_enforced(self):
        with pytest.raises(InvalidInputError):
            tensor(1.0, [[1, 0]], [[1, 0]])
        with pytest.raises(InvalidInputError):
            tensor(1.0, [[1, 0]], [[1, 0, 0], [1, 0, 0]])

    def test_factor_round_trip(self, rng):
        z = random_tensors(rng, 1, 4, 3)[0]
        back = sk.InducingTensor.from_factors(z.z0, z.factors(), 4)
        for a, b in zip(z.levels, back.levels):
            np.testing.assert_array_equal(a, b)


class TestCovInducing:
    def test_unit_products(self):
        assert sk.cov_inducing([Z_E1], lin_params(2)).values[0, 0] == 3.0

    def test_orthogonal_factors(self):
        assert sk.cov_inducing([Z_E1, Z_E2], lin_params(2)).values[0, 1] == 1.0

    def test_against_materialized_tensors(self, rng):
        for _ in range(20):
            depth, dim = int(rng.integers(1, 5)), int(rng.integers(1, 4))
            Z = random_tensors(rng, 3, depth, dim)
            sigma = rng.uniform(0.5, 2, depth + 1)
            params = lin_params(depth, sigma_prime=tuple(sigma))
            dense = [oracle.materialize(z) for z in Z]
            ref = np.array([[oracle.brute_cov(a, b, sigma) for b in dense] for a in dense])
            assert rel_err(sk.cov_inducing(Z, params).values, ref) <= 1e-12

    def test_mismatches(self, rng):
        with pytest.raises(InvalidInputError):
            sk.cov_inducing([Z_E1], lin_params(3))
        with pytest.raises(InvalidInputError):
            sk.cov_inducing([Z_E1, tensor(1.0, [[1, 0, 0]], [[1, 0, 0], [1, 0, 0]])], lin_params(2))
        with pytest.raises(InvalidInputError):
            sk.cov_inducing([], lin_params(2))


class TestCovCross:
    def test_single_increment(self):
        x = path([0, 0], [2, 0])
        assert sk.cov_cross([Z_E1], [x], lin_params(2)).values[0, 0] == 3.0

    def test_length_one_sequence(self, rng):
        z = random_tensors(rng, 1, 3, 2)[0]
        p = sk.SigKernelParams(depth=3, sigma_prime=(1.5, 1, 1, 1), static=LIN)
        out = sk.cov_cross([z], [path([0.3, 0.4])], p).values[0, 0]
        assert out == pytest.approx(1.5**2 * z.z0, rel=1e-15)

    def test_against_oracle(self, rng):
        for i in range(30):
            depth, d = int(rng.integers(1, 5)), int(rng.integers(1, 4))
            params = random_params(rng, depth, d, ("linear", "rbf")[i % 2], normalize=False)
            X = random_augmented(rng, 3, d, 6)
            Z = random_tensors(rng, 3, depth, d + 1)
            assert rel_err(sk.cov_cross(Z, X, params).values,
                           oracle.oracle_gram("zx", params, Z=Z, X=X)) <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            sk.cov_cross([Z_E1], [path([0, 0, 0], [1, 1, 1])], lin_params(2))

    @pytest.mark.filterwarnings("ignore:.*zero-norm")
    def test_chunked_batches_match(self, rng, monkeypatch):
        params = random_params(rng, 3, 2, "rbf", normalize=True)
        X = random_augmented(rng, 7, 2, 9)
        Z = random_tensors(rng, 4, 3, 3)
        full = sk.cov_cross(Z, X, params).values
        monkeypatch.setattr(sk, "_CROSS_CHUNK", 1)
        np.testing.assert_array_equal(sk.cov_cross(Z, X, params).values, full)


class TestCovSequences:
    def test_orthogonal_increments(self):
        x = path([0, 0], [1, 1])
        y = path([0, 0], [1, -1])
        assert sk.cov_sequences([x], [y], lin_params(2)).values[0, 0] == 1.0

    def test_two_unit_increments(self):
        x = path([0, 0], [1, 0], [1, 1])
        assert sk.cov_sequences([x], None, lin_params(2)).values[0, 0] == 4.0

    def test_straight_line_level_two(self):
        x = AugmentedSequence(np.outer(np.arange(5) / 4, [1.0, 0.0]))
        levels = sk.cov_sequences([x], None, lin_params(2), per_level=True).values[:, 0, 0]
        assert levels[2] == pytest.approx(comb(4, 2) ** 2 / 4**4, rel=1e-14)
        assert levels[2] == pytest.approx(0.140625, rel=1e-14)

    @pytest.mark.filterwarnings("ignore:.*zero-norm")
    def test_symmetric(self, rng):
        params = random_params(rng, 4, 2, "rbf", normalize=True)
        K = sk.cov_sequences(random_augmented(rng, 5, 2, 7, tau=0.5), None, params)
        np.testing.assert_array_equal(K.values, K.values.T)
        assert K.row_ids == K.col_ids

    def test_against_oracle(self, rng):
        for i in range(30):
            depth, d = int(rng.integers(1, 5)), int(rng.integers(1, 4))
            params = random_params(rng, depth, d, ("linear", "rbf")[i % 2], normalize=False)
            X = random_augmented(rng, 3, d, 6)
            Y = random_augmented(rng, 2, d, 6)
            assert rel_err(sk.cov_sequences(X, Y, params).values,
                           oracle.oracle_gram("xx", params, X=X, Y=Y)) <= 1e-12

    def test_length_one_sequence_gives_sigma0(self, rng):
        p = sk.SigKernelParams(depth=2, sigma_prime=(0.7, 1, 1), static=LIN)
        out = sk.cov_sequences([path([1.0, 2.0])], random_augmented(rng, 3, 1, 5), p).values
        np.testing.assert_allclose(out, 0.49, rtol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            sk.cov_sequences([path([0.0], [1.0])], [path([0, 0], [1, 1])], lin_params(1))

    def test_params_required(self):
        with pytest.raises(InvalidInputError):
            sk.cov_sequences([path([0.0], [1.0])])


class TestVarSequences:
    def test_one_increment(self):
        assert sk.var_sequences([path([0, 0], [1, 1])], lin_params(2)).values[0] == 3.0

    def test_length_one(self):
        p = sk.SigKernelParams(depth=3, sigma_prime=(2.0, 1, 1, 1), static=LIN)
        assert sk.var_sequences([path([5.0, 1.0])], p).values[0] == 4.0

    @pytest.mark.filterwarnings("ignore:.*zero-norm")
    @pytest.mark.parametrize("kind", ["linear", "rbf"])
    @pytest.mark.parametrize("normalize", [False, True])
    def test_matches_gram_diagonal(self, rng, kind, normalize):
        params = random_params(rng, 4, 3, kind, normalize)
        X = random_augmented(rng, 6, 3, 9, tau=0.3)
        diag = np.diag(sk.cov_sequences(X, None, params).values)
        assert rel_err(sk.var_sequences(X, params).values, diag) <= 1e-12


class TestNormalization:
    def test_unit_levels(self, rng):
        params = random_params(rng, 3, 2, "rbf", normalize=True)
        expected = np.sum(params.sigmas**2)
        X = [AugmentedSequence(np.cumsum(rng.standard_normal((6, 3)), axis=0)) for _ in range(4)]
        np.testing.assert_allclose(sk.var_sequences(X, params).values, expected, rtol=1e-13)
        np.testing.assert_allclose(np.diag(sk.cov_sequences(X, None, params).values), expected,
                                   rtol=1e-13)

    def test_scale_invariance_linear(self, rng):
        params = sk.SigKernelParams(depth=4, normalize_levels=True, static=LIN)
        X = [AugmentedSequence(rng.standard_normal((6, 2))) for _ in range(3)]
        Z = random_tensors(rng, 2, 4, 2)
        for c in (0.1, 3.0, 10.0):
            cX = [AugmentedSequence(c * x.values) for x in X]
            assert rel_err(sk.cov_sequences(cX, None, params).values,
                           sk.cov_sequences(X, None, params).values) <= 1e-10
            assert rel_err(sk.cov_cross(Z, cX, params).values,
                           sk.cov_cross(Z, X, params).values) <= 1e-10

    def test_only_sequence_side_of_cross_block(self, rng):
        params = sk.SigKernelParams(depth=2, normalize_levels=True, static=LIN)
        x = path([0, 0], [2, 0], [2, 3])
        unnorm = sk.cov_cross([Z_E1], [x], lin_params(2), per_level=True).values[:, 0, 0]
        selfsq = sk.var_sequences([x], lin_params(2), per_level=True).values[:, 0]
        norm = sk.cov_cross([Z_E1], [x], params, per_level=True).values[:, 0, 0]
        np.testing.assert_allclose(norm, unnorm / np.sqrt(selfsq), rtol=1e-15)

    def test_inducing_block_unchanged(self, rng):
        Z = random_tensors(rng, 3, 3, 2)
        a = sk.cov_inducing(Z, lin_params(3)).values
        b = sk.cov_inducing(Z, lin_params(3, normalize_levels=True)).values
        np.testing.assert_array_equal(a, b)

    def test_flat_sequence_falls_back_with_warning(self):
        params = lin_params(2, normalize_levels=True)
        flat = path([1.0, 1.0], [1.0, 1.0], [1.0, 1.0])
        with pytest.warns(RuntimeWarning, match="zero-norm"):
            out = sk.cov_sequences([flat], None, params).values
        assert out[0, 0] == 1.0  # only the level-0 constant survives
        with pytest.warns(RuntimeWarning):
            assert sk.var_sequences([flat], params).values[0] == 1.0

    def test_torch_gradients_finite_at_fallback(self):
        X = torch.zeros(1, 3, 2, dtype=torch.float64, requires_grad=True)
        out = sk.k_x(X, torch.ones(3, dtype=torch.float64), 2, "linear", normalize_levels=True)
        out.sum().backward()
        assert torch.isfinite(X.grad).all()


class TestGramBlock:
    def test_csv_export(self, tmp_path, rng):
        params = lin_params(2)
        X = random_augmented(rng, 3, 2, 5)
        block = sk.cov_sequences(tabulate(X, ids=["a", "b", "c"]), None, params)
        block.to_csv(tmp_path / "g.csv")
        rows = list(csv.reader(open(tmp_path / "g.csv")))
        assert rows[0] == ["row_id", "a", "b", "c"]
        np.testing.assert_array_equal(np.array([r[1:] for r in rows[1:]], dtype=float), block.values)
        assert block.params_digest == params.digest() and block.block == "xx"

    def test_diag_csv(self, tmp_path, rng):
        block = sk.var_sequences(random_augmented(rng, 2, 1, 4), lin_params(1))
        block.to_csv(tmp_path / "d.csv")
        assert len(open(tmp_path / "d.csv").read().splitlines()) == 3
