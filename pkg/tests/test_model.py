import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rsmaris.errors import ValidationError
from rsmaris.model import (
    Allocation,
    CommonRateSplit,
    FeasibilitySet,
    GeometryModel,
    NetworkConfig,
    PrecoderSet,
    RISPhases,
    StreamMode,
    all_transmit_covariances,
    bits_to_nats,
    complex_from_json,
    complex_to_json,
    db_to_linear,
    nats_to_bits,
    transmit_covariance,
    transmit_power,
    validate_config,
)

from conftest import crandn, small_config


def scenario_one():
    return NetworkConfig(L=2, K=3, M=2, N_BS=2, N_u=2, N_RIS=20, P=db_to_linear(10.0),
                         eps_c=5e-6, eps_p=5e-6, n=256)


def random_precoders(rng, L=2, K=3, N=2, d=None):
    d = N if d is None else d
    mode = StreamMode.FULL if d == N else StreamMode.SINGLE
    return PrecoderSet(crandn(rng, L, N, d), crandn(rng, L, K, N, d), mode)


class TestValidateConfig:
    def test_scenario_one_is_valid(self):
        cfg = scenario_one()
        assert validate_config(cfg) is cfg

    def test_no_ris_allowed(self):
        validate_config(small_config(M=0))

    @pytest.mark.parametrize("field,value", [
        ("eps_c", 0.7), ("eps_p", 0.0), ("P", -1.0), ("sigma2", 0.0), ("n", 0),
        ("K", 0), ("N_BS", 0), ("M", -1), ("p_c", 0.0), ("eta", 0.9), ("tau", 0.0),
        ("omega", -1.0),
    ])
    def test_names_violated_field(self, field, value):
        with pytest.raises(ValidationError) as exc:
            validate_config(small_config(**{field: value}))
        assert exc.value.field == field

    def test_weights_must_be_positive(self):
        with pytest.raises(ValidationError) as exc:
            validate_config(small_config(alpha=((1.0, 0.0), (1.0, 1.0))))
        assert exc.value.field == "alpha"

    def test_weight_shape_checked(self):
        with pytest.raises(ValidationError):
            validate_config(small_config(lam=((1.0,), (1.0,))))

    def test_default_weights_are_ones(self):
        cfg = small_config(K=3)
        np.testing.assert_array_equal(cfg.alpha_array, np.ones((2, 3)))
        np.testing.assert_array_equal(cfg.lam_array, np.ones((2, 3)))

    def test_dict_round_trip(self):
        cfg = scenario_one()
        back = NetworkConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg

    def test_from_dict_accepts_db_and_total_eps(self):
        cfg = NetworkConfig.from_dict(dict(L=1, K=2, M=0, N_BS=2, N_u=2, N_RIS=4,
                                           P_dB=10.0, eps=1e-5))
        assert cfg.P == pytest.approx(10.0)
        assert cfg.eps_c == cfg.eps_p == pytest.approx(5e-6)


class TestUnits:
    @pytest.mark.parametrize("db,lin", [(0.0, 1.0), (10.0, 10.0), (20.0, 100.0), (-10.0, 0.1)])
    def test_db(self, db, lin):
        assert db_to_linear(db) == pytest.approx(lin)

    @given(st.floats(-1e3, 1e3, allow_nan=False))
    def test_bits_nats_inverse(self, x):
        assert bits_to_nats(nats_to_bits(x)) == pytest.approx(x, abs=1e-12)

    def test_one_bit(self):
        assert nats_to_bits(np.log(2.0)) == pytest.approx(1.0)


class TestTransmitCovariance:
    def test_identity_common_only(self):
        p = PrecoderSet(np.eye(2)[None], np.zeros((1, 2, 2, 2)))
        np.testing.assert_allclose(transmit_covariance(p, 0), np.eye(2))
        assert transmit_power(p, 0) == pytest.approx(2.0)

    def test_zero(self):
        p = PrecoderSet(np.zeros((1, 2, 2)), np.zeros((1, 3, 2, 2)))
        np.testing.assert_array_equal(transmit_covariance(p, 0), np.zeros((2, 2)))
        assert transmit_power(p, 0) == 0.0

    def test_matches_elementwise_sum(self, rng):
        p = random_precoders(rng)
        for l in range(2):
            C = np.zeros((2, 2), complex)
            for W in [p.W_common[l]] + [p.W_private[l, k] for k in range(3)]:
                for a in range(2):
                    for b in range(2):
                        C[a, b] += sum(W[a, c] * np.conj(W[b, c]) for c in range(W.shape[1]))
            np.testing.assert_allclose(transmit_covariance(p, l), C, atol=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.sampled_from([1, None]))
    def test_hermitian_psd_and_frobenius(self, seed, N, d):
        rng = np.random.default_rng(seed)
        p = random_precoders(rng, L=2, K=2, N=N, d=d)
        for l in range(2):
            C = transmit_covariance(p, l)
            np.testing.assert_allclose(C, C.conj().T, atol=1e-12)
            assert np.linalg.eigvalsh(C).min() >= -1e-10
            frob = np.sum(np.abs(p.blocks[l]) ** 2)
            assert transmit_power(p, l) == pytest.approx(frob, rel=1e-12)

    def test_batched_matches_single(self, rng):
        p = random_precoders(rng)
        C = all_transmit_covariances(p.blocks)
        for l in range(2):
            np.testing.assert_allclose(C[l], transmit_covariance(p, l), atol=1e-12)


class TestPrecoderSet:
    def test_single_stream_requires_one_column(self):
        with pytest.raises(ValueError):
            PrecoderSet(np.zeros((1, 2, 2)), np.zeros((1, 2, 2, 2)), StreamMode.SINGLE)

    def test_full_requires_square(self):
        with pytest.raises(ValueError):
            PrecoderSet(np.zeros((1, 2, 1)), np.zeros((1, 2, 2, 1)), StreamMode.FULL)

    def test_immutable(self, rng):
        p = random_precoders(rng)
        with pytest.raises(AttributeError):
            p.blocks = None
        with pytest.raises(ValueError):
            p.blocks[0, 0, 0, 0] = 1.0

    def test_zeros_shape(self):
        cfg = small_config(K=3)
        assert PrecoderSet.zeros(cfg).blocks.shape == (2, 4, 2, 2)
        assert PrecoderSet.zeros(cfg, StreamMode.SINGLE).blocks.shape == (2, 4, 2, 1)

    def test_round_trip(self, rng):
        p = random_precoders(rng, d=1)
        back = PrecoderSet.from_dict(json.loads(json.dumps(p.to_dict())))
        np.testing.assert_array_equal(back.blocks, p.blocks)
        assert back.stream_mode is StreamMode.SINGLE


class TestRISPhases:
    def test_unit_disc_bound(self):
        with pytest.raises(ValueError):
            RISPhases(np.array([[1.1]]), FeasibilitySet.UNIT_DISC)
        RISPhases(np.array([[0.3j, 1.0]]), FeasibilitySet.UNIT_DISC)

    def test_unit_modulus_bound(self):
        with pytest.raises(ValueError):
            RISPhases(np.array([[0.5]]), FeasibilitySet.UNIT_MODULUS)
        RISPhases(np.exp(1j * np.array([[0.1, 2.0]])), FeasibilitySet.UNIT_MODULUS)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 16))
    def test_serialization_bit_exact(self, seed, M, N):
        rng = np.random.default_rng(seed)
        ris = RISPhases.random(M, N, rng, FeasibilitySet.UNIT_MODULUS)
        back = RISPhases.from_dict(json.loads(json.dumps(ris.to_dict())))
        assert back.upsilon.tobytes() == ris.upsilon.tobytes()
        assert back.feasibility_set is FeasibilitySet.UNIT_MODULUS

    def test_random_is_unit_modulus(self, rng):
        ris = RISPhases.random(2, 8, rng)
        np.testing.assert_allclose(np.abs(ris.upsilon), 1.0, atol=1e-15)


class TestJsonHelpers:
    def test_pairs_layout(self):
        assert complex_to_json(np.array([1 + 2j, -3j])) == [[1.0, 2.0], [0.0, -3.0]]

    def test_round_trip_with_shape(self, rng):
        a = crandn(rng, 2, 3, 4)
        np.testing.assert_array_equal(complex_from_json(complex_to_json(a), a.shape), a)


class TestAllocation:
    def test_round_trip(self, rng):
        p = random_precoders(rng)
        alloc = Allocation(p, RISPhases.random(2, 4, rng), CommonRateSplit(np.ones((2, 3))),
                           rates=np.full((2, 3), 0.5), ees=np.full((2, 3), 0.1), objective=0.5,
                           trace=({"iteration": 0, "objective": 0.4},), info={"seed": 3})
        back = Allocation.from_dict(json.loads(json.dumps(alloc.to_dict())))
        np.testing.assert_array_equal(back.precoders.blocks, p.blocks)
        np.testing.assert_array_equal(back.split.t, alloc.split.t)
        assert back.objective == alloc.objective
        assert back.trace == alloc.trace
        assert back.info == {"seed": 3}

    def test_split_nonnegative(self):
        with pytest.raises(ValueError):
            CommonRateSplit(np.array([[-0.1]]))


class TestGeometry:
    def test_default_layout(self):
        g = GeometryModel.default(2, 2)
        bs = np.asarray(g.bs_positions)
        ris = np.asarray(g.ris_positions)
        assert np.linalg.norm(bs[1] - bs[0]) == pytest.approx(200.0)
        assert np.linalg.norm(ris[0, :2] - bs[0, :2]) == pytest.approx(20.0)
        assert g.rician_k == 3.0
