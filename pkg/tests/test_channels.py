import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import block_diag

from rsmaris.channels import (
    ChannelSet,
    draw_channels,
    effective_channel,
    effective_channels,
    ris_scattering_matrix,
)
from rsmaris.errors import GeometryError
from rsmaris.model import FeasibilitySet, GeometryModel, NetworkConfig, RISPhases

from conftest import crandn, small_config


def pinned_geometry(cfg, users, **kw):
    g = GeometryModel.default(cfg.L, cfg.M)
    return GeometryModel(g.bs_positions, g.ris_positions, g.user_centers,
                         user_positions=tuple(tuple(tuple(u) for u in row)
                                              for row in np.asarray(users, float)), **kw)


def toy_channels(F, G_ru, G_br):
    return ChannelSet(np.asarray(F, complex), np.asarray(G_ru, complex), np.asarray(G_br, complex))


class TestDrawChannels:
    def test_shapes(self):
        cfg = small_config(K=3, M=2, N_RIS=5, N_u=3)
        ch = draw_channels(cfg, seed=1)
        assert ch.F.shape == (2, 3, 2, 3, 2)
        assert ch.G_ru.shape == (2, 3, 2, 3, 5)
        assert ch.G_br.shape == (2, 2, 5, 2)
        assert all(np.all(np.isfinite(a)) for a in (ch.F, ch.G_ru, ch.G_br))

    def test_deterministic(self):
        cfg = small_config()
        a, b = draw_channels(cfg, seed=7), draw_channels(cfg, seed=7)
        for x, y in ((a.F, b.F), (a.G_ru, b.G_ru), (a.G_br, b.G_br)):
            assert x.tobytes() == y.tobytes()

    def test_seeds_differ(self):
        cfg = small_config()
        assert not np.allclose(draw_channels(cfg, seed=1).F, draw_channels(cfg, seed=2).F)

    def test_streams_independent_of_ris_size(self):
        # the direct links come from their own streams
        a = draw_channels(small_config(N_RIS=4), seed=3)
        b = draw_channels(small_config(N_RIS=9), seed=3)
        np.testing.assert_array_equal(a.F, b.F)

    def test_los_limit(self):
        cfg = small_config(L=1, K=1, M=1, N_BS=3, N_u=2, N_RIS=6)
        user = np.array([[[30.0, 12.0, 1.5]]])
        geom = pinned_geometry(cfg, user, rician_k=math.inf)
        ch = draw_channels(cfg, geom, seed=0)
        bs = np.asarray(geom.bs_positions[0])
        ris = np.asarray(geom.ris_positions[0])
        for G, a, b, n_rx, n_tx in ((ch.G_br[0, 0], bs, ris, 6, 3),
                                    (ch.G_ru[0, 0, 0], ris, user[0, 0], 2, 6)):
            d = np.linalg.norm(b - a)
            cosang = (b - a)[0] / d
            rx = np.exp(1j * np.pi * np.arange(n_rx) * -cosang)
            tx = np.exp(1j * np.pi * np.arange(n_tx) * cosang)
            los = np.outer(rx, tx.conj())
            scale = np.abs(G[0, 0])
            np.testing.assert_allclose(G, scale * los, atol=1e-12 * scale)
            assert np.linalg.matrix_rank(G, tol=1e-9 * scale) == 1

    def test_direct_gain_moment(self):
        cfg = NetworkConfig(L=1, K=1, M=0, N_BS=16, N_u=16, N_RIS=1, P=1.0)
        user = np.array([[[60.0, 0.0, 1.5]]])
        geom = pinned_geometry(cfg, user)
        d = np.linalg.norm(user[0, 0] - np.asarray(geom.bs_positions[0]))
        gain = 10 ** ((geom.noise_offset_db - geom.ref_loss_db) / 10) * d ** -geom.pl_exp_direct
        samples = np.concatenate([np.abs(draw_channels(cfg, geom, seed=s).F).ravel() ** 2
                                  for s in range(400)])
        assert samples.size >= 10**5
        assert np.mean(samples) == pytest.approx(gain, rel=0.02)

    def test_zero_distance_rejected(self):
        cfg = small_config(L=1, K=1, M=1)
        g = GeometryModel.default(1, 1)
        with pytest.raises(GeometryError):
            draw_channels(cfg, pinned_geometry(cfg, np.asarray(g.bs_positions[0])[None, None]),
                          seed=0)

    def test_dict_round_trip(self):
        ch = draw_channels(small_config(), seed=5)
        back = ChannelSet.from_dict(json.loads(json.dumps(ch.to_dict())))
        for x, y in ((ch.F, back.F), (ch.G_ru, back.G_ru), (ch.G_br, back.G_br)):
            assert x.tobytes() == y.tobytes()


class TestScatteringMatrix:
    def test_ones_give_identity(self):
        np.testing.assert_array_equal(ris_scattering_matrix(RISPhases(np.ones((1, 4))), 0),
                                      np.eye(4))

    def test_zeros(self):
        np.testing.assert_array_equal(ris_scattering_matrix(RISPhases(np.zeros((2, 3))), 1),
                                      np.zeros((3, 3)))

    def test_single_entry(self):
        ups = np.zeros((1, 3), complex)
        ups[0, 0] = np.exp(1j * np.pi / 2)
        U = ris_scattering_matrix(RISPhases(ups), 0)
        assert U[0, 0] == pytest.approx(1j)
        assert np.count_nonzero(np.abs(U) > 1e-15) == 1

    def test_index_checked(self):
        with pytest.raises(IndexError):
            ris_scattering_matrix(RISPhases(np.ones((1, 2))), 1)


class TestEffectiveChannel:
    def test_ris_off(self):
        ch = draw_channels(small_config(), seed=0)
        H = effective_channel(ch, RISPhases(np.zeros((1, 4))), 1, 0, 0)
        np.testing.assert_array_equal(H, ch.F[1, 0, 0])

    @pytest.mark.parametrize("theta", [0.0, 0.7, -2.5])
    def test_scalar_toy(self, theta):
        ch = toy_channels(np.zeros((1, 1, 1, 1, 1)), np.ones((1, 1, 1, 1, 1)),
                          np.ones((1, 1, 1, 1)))
        H = effective_channel(ch, RISPhases(np.exp(1j * np.array([[theta]]))), 0, 0, 0)
        assert H[0, 0] == pytest.approx(np.exp(1j * theta))

    def test_dense_recomputation(self, rng):
        cfg = small_config(M=2, N_RIS=3, N_u=2, N_BS=3)
        ch = draw_channels(cfg, seed=4)
        ris = RISPhases.random(2, 3, rng)
        for l, k, i in [(0, 0, 0), (1, 1, 0), (0, 1, 1)]:
            G_ru = np.hstack([ch.G_ru[l, k, m] for m in range(2)])
            G_br = np.vstack([ch.G_br[m, i] for m in range(2)])
            U = block_diag(*[np.diag(ris.upsilon[m]) for m in range(2)])
            dense = ch.F[l, k, i] + G_ru @ U @ G_br
            np.testing.assert_allclose(effective_channel(ch, ris, l, k, i), dense, atol=1e-12)

    def test_batched_matches_single(self, rng):
        cfg = small_config(M=2)
        ch = draw_channels(cfg, seed=2)
        ris = RISPhases.random(2, cfg.N_RIS, rng)
        H = effective_channels(ch, ris.upsilon)
        for l in range(2):
            for k in range(2):
                for i in range(2):
                    np.testing.assert_allclose(H[l, k, i], effective_channel(ch, ris, l, k, i),
                                               atol=1e-12)

    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
    def test_affine_in_phases(self, seed, lam):
        rng = np.random.default_rng(seed)
        F, G_ru, G_br = crandn(rng, 1, 2, 1, 2, 2), crandn(rng, 1, 2, 2, 2, 3), crandn(rng, 2, 1, 3, 2)
        ch = toy_channels(F, G_ru, G_br)
        p, q = crandn(rng, 2, 3), crandn(rng, 2, 3)
        mix = effective_channels(ch, lam * p + (1 - lam) * q)
        np.testing.assert_allclose(
            mix, lam * effective_channels(ch, p) + (1 - lam) * effective_channels(ch, q),
            atol=1e-12)

    def test_no_ris_equals_direct(self):
        ch = draw_channels(small_config(M=0), seed=1)
        np.testing.assert_array_equal(effective_channels(ch, None), ch.F)
        np.testing.assert_array_equal(
            effective_channel(ch, RISPhases.empty(FeasibilitySet.UNIT_DISC), 0, 1, 1), ch.F[0, 1, 1])

    def test_without_ris(self):
        ch = draw_channels(small_config(M=1), seed=1).without_ris()
        assert ch.M == 0
        np.testing.assert_array_equal(effective_channels(ch, np.ones((1, 4))), ch.F)
