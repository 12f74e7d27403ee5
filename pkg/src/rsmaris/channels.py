"""Random channel realisations and the RIS-dependent effective channel."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GeometryError
from .model import (
    GeometryModel,
    NetworkConfig,
    RISPhases,
    complex_from_json,
    complex_to_json,
)

_TAG_USERS, _TAG_DIRECT, _TAG_RIS_USER, _TAG_BS_RIS = 0, 1, 2, 3


@dataclass(frozen=True)
class ChannelSet:
    """All links of one Monte Carlo draw.

    F[l, k, i]    : N_u x N_BS     BS i -> user (l, k)
    G_ru[l, k, m] : N_u x N_RIS    RIS m -> user (l, k)
    G_br[m, i]    : N_RIS x N_BS   BS i -> RIS m
    """

    F: np.ndarray
    G_ru: np.ndarray
    G_br: np.ndarray
    seed: Optional[int] = None
    user_positions: Optional[np.ndarray] = None

    @property
    def M(self) -> int:
        return self.G_br.shape[0]

    def without_ris(self) -> "ChannelSet":
        L, K, _, N_u, N_BS = self.F.shape
        return ChannelSet(
            F=self.F,
            G_ru=np.zeros((L, K, 0, N_u, 0), complex),
            G_br=np.zeros((0, L, 0, N_BS), complex),
            seed=self.seed,
            user_positions=self.user_positions,
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "F_shape": list(self.F.shape),
            "G_ru_shape": list(self.G_ru.shape),
            "G_br_shape": list(self.G_br.shape),
            "F": complex_to_json(self.F),
            "G_ru": complex_to_json(self.G_ru),
            "G_br": complex_to_json(self.G_br),
            "user_positions": None if self.user_positions is None
            else np.asarray(self.user_positions).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelSet":
        up = d.get("user_positions")
        return cls(
            F=complex_from_json(d["F"], d["F_shape"]),
            G_ru=complex_from_json(d["G_ru"], d["G_ru_shape"]),
            G_br=complex_from_json(d["G_br"], d["G_br_shape"]),
            seed=d.get("seed"),
            user_positions=None if up is None else np.asarray(up, dtype=float),
        )


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _ula(n: int, cos_angle: float) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(n) * cos_angle)


def _distance(a, b) -> tuple[float, float]:
    """Distance and direction cosine (along the x axis) from ``a`` to ``b``."""
    diff = np.asarray(b, float) - np.asarray(a, float)
    d = float(np.linalg.norm(diff))
    if d <= 0.0:
        raise GeometryError(f"zero-length link between {tuple(a)} and {tuple(b)}")
    return d, diff[0] / d


def _gain(d: float, exponent: float, offset_db: float) -> float:
    return 10.0 ** (offset_db / 10.0) * d ** (-exponent)


def drop_users(cfg: NetworkConfig, geom: GeometryModel, seed: int) -> np.ndarray:
    if geom.user_positions is not None:
        return np.asarray(geom.user_positions, dtype=float).reshape(cfg.L, cfg.K, 3)
    rng = _stream(seed, _TAG_USERS)
    r = geom.user_radius * np.sqrt(rng.uniform(size=(cfg.L, cfg.K)))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=(cfg.L, cfg.K))
    centers = np.asarray(geom.user_centers, dtype=float)[:, :2]
    pos = np.empty((cfg.L, cfg.K, 3))
    pos[..., 0] = centers[:, None, 0] + r * np.cos(phi)
    pos[..., 1] = centers[:, None, 1] + r * np.sin(phi)
    pos[..., 2] = geom.user_height
    return pos


def _rician(rng, los: np.ndarray, kappa: float) -> np.ndarray:
    if np.isinf(kappa):
        return los
    nlos = _cn(rng, los.shape)
    return np.sqrt(kappa / (1.0 + kappa)) * los + np.sqrt(1.0 / (1.0 + kappa)) * nlos


def draw_channels(cfg: NetworkConfig, geom: Optional[GeometryModel] = None,
                  seed: int = 0) -> ChannelSet:
    """Draw one channel realisation; bit-identical for equal ``(cfg, geom, seed)``.

    Direct links are Rayleigh with the ``pl_exp_direct`` path loss.  Both RIS
    legs are Rician with factor ``geom.rician_k`` whose LoS part is the
    rank-one product of half-wavelength ULA steering vectors.
    """
    geom = cfg.geometry if geom is None else geom
    geom.validate(cfg.L, cfg.M, cfg.K)
    L, K, M = cfg.L, cfg.K, cfg.M
    N_u, N_BS, N_RIS = cfg.N_u, cfg.N_BS, cfg.N_RIS
    users = drop_users(cfg, geom, seed)
    bs = np.asarray(geom.bs_positions, dtype=float).reshape(L, 3)
    ris = np.asarray(geom.ris_positions, dtype=float).reshape(M, 3)
    off = geom.noise_offset_db - geom.ref_loss_db

    F = np.empty((L, K, L, N_u, N_BS), complex)
    for l in range(L):
        for k in range(K):
            for i in range(L):
                d, _ = _distance(bs[i], users[l, k])
                beta = _gain(d, geom.pl_exp_direct, off)
                F[l, k, i] = np.sqrt(beta) * _cn(_stream(seed, _TAG_DIRECT, l, k, i), (N_u, N_BS))

    G_br = np.empty((M, L, N_RIS, N_BS), complex)
    for m in range(M):
        for i in range(L):
            d, u = _distance(bs[i], ris[m])
            los = np.outer(_ula(N_RIS, -u), _ula(N_BS, u).conj())
            beta = _gain(d, geom.pl_exp_ris, off)
            G_br[m, i] = np.sqrt(beta) * _rician(_stream(seed, _TAG_BS_RIS, m, i), los, geom.rician_k)

    G_ru = np.empty((L, K, M, N_u, N_RIS), complex)
    for l in range(L):
        for k in range(K):
            for m in range(M):
                d, u = _distance(ris[m], users[l, k])
                los = np.outer(_ula(N_u, -u), _ula(N_RIS, u).conj())
                beta = _gain(d, geom.pl_exp_ris, -geom.ref_loss_db)
                G_ru[l, k, m] = np.sqrt(beta) * _rician(
                    _stream(seed, _TAG_RIS_USER, l, k, m), los, geom.rician_k)

    return ChannelSet(F=F, G_ru=G_ru, G_br=G_br, seed=seed, user_positions=users)


def ris_scattering_matrix(ris: RISPhases, m: int) -> np.ndarray:
    if not 0 <= m < ris.M:
        raise IndexError(f"RIS index {m} out of range")
    return np.diag(ris.upsilon[m])


def effective_channel(ch: ChannelSet, ris: RISPhases, l: int, k: int, i: int) -> np.ndarray:
    """``H_{lk,i} = sum_m G_ru[l,k,m] diag(v_m) G_br[m,i] + F[l,k,i]``."""
    H = ch.F[l, k, i].copy()
    for m in range(ch.M):
        H += (ch.G_ru[l, k, m] * ris.upsilon[m][None, :]) @ ch.G_br[m, i]
    return H


def effective_channels(ch: ChannelSet, upsilon: Optional[np.ndarray]) -> np.ndarray:
    """All effective channels at once, shape ``(L, K, L, N_u, N_BS)``."""
    if ch.M == 0 or upsilon is None or np.size(upsilon) == 0:
        return ch.F.copy()
    return ch.F + np.einsum("lkmun,mn,minb->lkiub", ch.G_ru, upsilon, ch.G_br, optimize=True)
