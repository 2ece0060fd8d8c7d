import numpy as np
import pytest

from steepdesc.errors import ShapeMismatchError, ZeroVectorError
from steepdesc.norms import (NormSpec, dual_norm_value, norm_subgradient,
                             norm_value, steepest_direction, thin_svd)
from steepdesc.params import ParamVector


def pv(*arrays):
    return ParamVector.of(*(np.asarray(a, dtype=float) for a in arrays))


ALL_FLAT = [NormSpec.l1(), NormSpec.l2(), NormSpec.linf()]


def random_param_vector(rng, spectral_friendly=False):
    if spectral_friendly or rng.random() < 0.5:
        blocks = [rng.standard_normal((rng.integers(1, 5), rng.integers(1, 5))),
                  rng.standard_normal(rng.integers(1, 6))]
    else:
        blocks = [rng.standard_normal(rng.integers(1, 8))]
    return pv(*blocks)


def all_specs_for(v):
    specs = list(ALL_FLAT) + [NormSpec.spectral()]
    block_choices = [NormSpec.l2(), NormSpec.linf(), NormSpec.spectral(),
                     NormSpec.l1()]
    specs.append(NormSpec.modular([block_choices[i % len(block_choices)]
                                   for i in range(v.n_blocks)]))
    return specs


class TestNormValue:
    def test_l1_closed_form(self):
        assert norm_value(NormSpec.l1(), pv([3.0, -4.0])) == 7.0

    def test_spectral_diagonal_block(self):
        assert norm_value(NormSpec.spectral(), pv(np.diag([2.0, 1.0]))) == pytest.approx(2.0)

    def test_modular_max_of_blocks(self):
        spec = NormSpec.modular([NormSpec.l2(), NormSpec.linf()])
        v = pv([3.0, 4.0], [-5.0, 1.0])
        assert norm_value(spec, v) == pytest.approx(5.0)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            v = random_param_vector(rng)
            c = float(rng.uniform(0.1, 10.0))
            for spec in all_specs_for(v):
                assert norm_value(spec, v.scaled(c)) == pytest.approx(
                    c * norm_value(spec, v), rel=1e-12)

    def test_modular_block_count_mismatch(self):
        spec = NormSpec.modular([NormSpec.l2()])
        with pytest.raises(ShapeMismatchError):
            norm_value(spec, pv([1.0], [2.0]))

    def test_no_nested_modular(self):
        inner = NormSpec.modular([NormSpec.l2()])
        with pytest.raises(ValueError):
            NormSpec.modular([inner])


class TestDualNorm:
    def test_l1_dual_is_linf(self):
        assert dual_norm_value(NormSpec.l1(), pv([3.0, -4.0])) == 4.0

    def test_spectral_dual_is_nuclear(self):
        assert dual_norm_value(NormSpec.spectral(), pv(np.diag([2.0, 1.0]))) \
            == pytest.approx(3.0)

    def test_modular_dual_sums_blocks(self):
        spec = NormSpec.modular([NormSpec.l2(), NormSpec.l2()])
        assert dual_norm_value(spec, pv([3.0, 4.0], [0.0, 0.0])) == pytest.approx(5.0)

    def test_generalized_cauchy_schwarz(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            u = random_param_vector(rng)
            w = ParamVector(tuple(rng.standard_normal(b.shape) for b in u.blocks))
            for spec in all_specs_for(u):
                lhs = abs(u.dot(w))
                rhs = norm_value(spec, u) * dual_norm_value(spec, w)
                assert lhs <= rhs * (1.0 + 1e-10)


class TestSteepestDirection:
    def test_l2_is_negative_gradient(self):
        d = steepest_direction(NormSpec.l2(), pv([3.0, 4.0]))
        np.testing.assert_allclose(d.blocks[0], [-3.0, -4.0])

    def test_l1_coordinate_step(self):
        g = pv([3.0, -4.0])
        d = steepest_direction(NormSpec.l1(), g)
        np.testing.assert_allclose(d.blocks[0], [0.0, 4.0])
        assert d.dot(g) == pytest.approx(-16.0)

    def test_linf_sign_step(self):
        g = pv([3.0, -4.0])
        d = steepest_direction(NormSpec.linf(), g)
        np.testing.assert_allclose(d.blocks[0], [-7.0, 7.0])
        assert d.dot(g) == pytest.approx(-49.0)

    def test_single_spectral_block(self):
        g = pv(np.diag([2.0, 1.0]))
        d = steepest_direction(NormSpec.spectral(), g)
        np.testing.assert_allclose(d.blocks[0], -3.0 * np.eye(2), atol=1e-12)
        assert norm_value(NormSpec.spectral(), d) == pytest.approx(3.0)

    def test_zero_gradient_maps_to_zero(self):
        g = pv([0.0, 0.0])
        for spec in ALL_FLAT:
            assert not steepest_direction(spec, g).blocks[0].any()

    def test_dual_pairing_identity(self):
        # <d, g> = -||g||*^2 and ||d|| = ||g||* for every spec
        rng = np.random.default_rng(3)
        for _ in range(200):
            g = random_param_vector(rng)
            for spec in all_specs_for(g):
                dual = dual_norm_value(spec, g)
                if dual == 0.0:
                    continue
                d = steepest_direction(spec, g)
                assert d.dot(g) == pytest.approx(-dual * dual, rel=1e-10)
                assert norm_value(spec, d) == pytest.approx(dual, rel=1e-10)

    def test_flat_agrees_with_modular_split(self):
        # l1/linf on the flat view == modular composition over per-coordinate
        # blocks, checked exhaustively for p <= 6
        rng = np.random.default_rng(5)
        for p in range(2, 7):
            flat = rng.standard_normal(p)
            g_flat = pv(flat)
            g_split = ParamVector(tuple(np.array([v]) for v in flat))
            mod_linf = NormSpec.modular([NormSpec.linf()] * p)
            mod_l1_dual = NormSpec.l1()
            assert dual_norm_value(NormSpec.linf(), g_flat) == pytest.approx(
                dual_norm_value(mod_linf, g_split), rel=1e-12)
            d_flat = steepest_direction(NormSpec.linf(), g_flat).flat()
            d_split = steepest_direction(mod_linf, g_split).flat()
            np.testing.assert_allclose(d_flat, d_split, rtol=1e-12)
            # brute force: the l1 steepest direction beats every vertex pair
            d1 = steepest_direction(mod_l1_dual, g_flat)
            best = min(-abs(flat[j]) * abs(flat[j]) for j in range(p))
            assert d1.dot(g_flat) == pytest.approx(best, rel=1e-12)


class TestNormSubgradient:
    def test_l2_unit_vector(self):
        n = norm_subgradient(NormSpec.l2(), pv([3.0, 4.0]))
        np.testing.assert_allclose(n.blocks[0], [0.6, 0.8])

    def test_l1_sign_vector(self):
        theta = pv([3.0, -4.0, 0.0])
        n = norm_subgradient(NormSpec.l1(), theta)
        np.testing.assert_allclose(n.blocks[0], [1.0, -1.0, 0.0])
        assert n.dot(theta) == pytest.approx(7.0)

    def test_linf_peak_coordinate(self):
        theta = pv([3.0, -4.0])
        n = norm_subgradient(NormSpec.linf(), theta)
        np.testing.assert_allclose(n.blocks[0], [0.0, -1.0])
        assert n.dot(theta) == pytest.approx(4.0)

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVectorError):
            norm_subgradient(NormSpec.l2(), pv([0.0, 0.0]))

    def test_subgradient_contract(self):
        # <n, theta> = ||theta|| and ||n||* <= 1 for all specs
        rng = np.random.default_rng(13)
        for _ in range(200):
            theta = random_param_vector(rng)
            for spec in all_specs_for(theta):
                n = norm_subgradient(spec, theta)
                assert n.dot(theta) == pytest.approx(
                    norm_value(spec, theta), rel=1e-10)
                assert dual_norm_value(spec, n) <= 1.0 + 1e-10

    def test_linf_tie_breaks_to_lowest_index(self):
        n = norm_subgradient(NormSpec.linf(), pv([-2.0, 2.0]))
        np.testing.assert_allclose(n.blocks[0], [-1.0, 0.0])


class TestThinSvd:
    def test_diagonal(self):
        u, s, v = thin_svd(np.diag([2.0, 1.0]))
        np.testing.assert_allclose(u, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(s, [2.0, 1.0])
        np.testing.assert_allclose(v, np.eye(2), atol=1e-12)

    def test_zero_matrix_empty_spectrum(self):
        _, s, _ = thin_svd(np.zeros((3, 2)))
        assert s.size == 0

    def test_reconstruction_vs_gram_eigendecomposition(self):
        # independent oracle: singular values from eigh of M^T M
        rng = np.random.default_rng(17)
        m = rng.standard_normal((5, 3))
        u, s, v = thin_svd(m)
        np.testing.assert_allclose(u @ np.diag(s) @ v.T, m,
                                   atol=1e-10 * np.linalg.norm(m))
        gram_vals = np.linalg.eigh(m.T @ m)[0]
        oracle = np.sqrt(np.clip(gram_vals, 0.0, None))[::-1]
        np.testing.assert_allclose(s, oracle, rtol=1e-8)

    def test_rank_truncation(self):
        m = np.outer([1.0, 2.0], [3.0, 4.0])  # rank one
        _, s, _ = thin_svd(m)
        assert s.size == 1
