"""Concave quadratic minorants of the finite-blocklength rates.

Every surrogate is a function of the received blocks ``Y_b = H_{lk,i} W_{ij}``:

    f(Y) = a + 2 sum_b Re Tr(A_b Y_b^H) - Tr(B (sigma2 I + sum_{b in Q} Y_b Y_b^H))

With the channels frozen the blocks are linear in the precoders, and with the
precoders frozen they are affine in the RIS coefficients, so one set of
coefficients serves both the precoder update and the RIS update.  ``B`` is
positive semidefinite, hence ``f`` is concave in either block of variables.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channels import ChannelSet, effective_channels
from .errors import DegenerateExpansionError, DomainError, SingularityError
from .model import NetworkConfig, PrecoderSet, RISPhases
from .rates import (
    NetworkRates,
    ReceivedStatistics,
    inverse_q,
    network_rates,
    received_blocks,
    received_statistics,
)

DEGENERATE_DISPERSION = 1e-12


class SurrogateKind(str, enum.Enum):
    PRIVATE_W = "private_in_W"
    COMMON_W = "common_in_W"
    PRIVATE_RIS = "private_in_RIS"
    COMMON_RIS = "common_in_RIS"


# ---------------------------------------------------------------------------
# Scalar / matrix bounds
# ---------------------------------------------------------------------------

def _inv(A):
    try:
        return np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("matrix is singular") from exc


def logdet_lower_bound(Gamma, Gamma_bar, Omega, Omega_bar) -> float:
    """Quadratic minorant of ``ln|I + Omega^{-1} Gamma Gamma^H|`` tight at the bar point."""
    Gamma, Gamma_bar = np.asarray(Gamma, complex), np.asarray(Gamma_bar, complex)
    Omega, Omega_bar = np.asarray(Omega, complex), np.asarray(Omega_bar, complex)
    Ob_inv = _inv(Omega_bar)
    Sb = Gamma_bar @ Gamma_bar.conj().T
    Tb_inv = _inv(Sb + Omega_bar)
    m = Omega.shape[0]
    sign, logdet = np.linalg.slogdet(np.eye(m) + Ob_inv @ Sb)
    val = logdet.real
    val -= np.trace(Ob_inv @ Sb).real
    val += 2.0 * np.trace(Ob_inv @ Gamma_bar @ Gamma.conj().T).real
    val -= np.trace((Ob_inv - Tb_inv).conj().T @ (Gamma @ Gamma.conj().T + Omega)).real
    return float(val)


def trace_lower_bound(Gamma, Gamma_bar, Omega, Omega_bar) -> float:
    """Minorant of ``Tr(Omega^{-1} Gamma Gamma^H)``, linear in ``Omega``."""
    Gamma, Gamma_bar = np.asarray(Gamma, complex), np.asarray(Gamma_bar, complex)
    Omega = np.asarray(Omega, complex)
    Ob_inv = _inv(np.asarray(Omega_bar, complex))
    val = 2.0 * np.trace(Ob_inv @ Gamma_bar @ Gamma.conj().T).real
    val -= np.trace(Ob_inv @ Gamma_bar @ Gamma_bar.conj().T @ Ob_inv @ Omega).real
    return float(val)


def sqrt_upper_bound(zeta: float, zeta_bar: float) -> float:
    """Tangent-line majorant of ``sqrt(zeta)`` at ``zeta_bar``."""
    if not zeta_bar > 0:
        raise DomainError("zeta_bar must be > 0")
    s = math.sqrt(zeta_bar)
    return s / 2.0 + zeta / (2.0 * s)


# ---------------------------------------------------------------------------
# Expansion point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpansionPoint:
    """Statistics of the current iterate, cached for surrogate construction."""

    precoders: PrecoderSet
    ris: RISPhases
    H: np.ndarray
    stats: ReceivedStatistics
    sigma2: float
    n: float
    q_c: float
    q_p: float
    channels: Optional[ChannelSet] = None

    @classmethod
    def build(cls, cfg: NetworkConfig, ch: ChannelSet, precoders: PrecoderSet,
              ris: RISPhases, shannon: bool = False, n: Optional[float] = None) -> "ExpansionPoint":
        H = effective_channels(ch, ris.upsilon)
        stats = received_statistics(H, precoders.blocks, cfg.sigma2)
        q_c = 0.0 if shannon else inverse_q(cfg.eps_c)
        q_p = 0.0 if shannon else inverse_q(cfg.eps_p)
        return cls(precoders, ris, H, stats, cfg.sigma2, float(cfg.n if n is None else n), q_c, q_p, ch)

    @property
    def shannon(self) -> bool:
        return self.q_c == 0.0 and self.q_p == 0.0

    def rates(self) -> NetworkRates:
        return network_rates(self.H, self.precoders.blocks, self.sigma2, self.n,
                             self.q_c, self.q_p, stats=self.stats)

    @property
    def zeta_p(self) -> np.ndarray:
        st = self.stats
        return 2.0 * np.real(np.trace(np.linalg.solve(st.D_c, st.S), axis1=-2, axis2=-1))

    @property
    def zeta_c(self) -> np.ndarray:
        st = self.stats
        return 2.0 * np.real(np.trace(np.linalg.solve(st.D_c + st.S_c, st.S_c), axis1=-2, axis2=-1))


@dataclass(frozen=True)
class SurrogateBank:
    """Coefficients for every user of one surrogate family (private or common).

    a: (L, K); A: (L, K, L, K+1, N_u, d); B: (L, K, N_u, N_u);
    quad_mask: (L, K, L, K+1) marks blocks inside the quadratic term.
    ``valid`` flags users whose coefficients were built.
    """

    a: np.ndarray
    A: np.ndarray
    B: np.ndarray
    quad_mask: np.ndarray
    sigma2: float
    common: bool
    valid: np.ndarray

    def values(self, Y: np.ndarray) -> np.ndarray:
        """Surrogate values for received blocks ``Y`` of shape (L, K, L, K+1, N_u, d)."""
        lin = 2.0 * np.einsum("lkijad,lkijad->lk", self.A, Y.conj(), optimize=True).real
        Ym = Y * self.quad_mask[..., None, None]
        quad = np.einsum("lkijad,lkab,lkijbd->lk", Ym.conj(), self.B, Y, optimize=True).real
        trB = np.real(np.trace(self.B, axis1=-2, axis2=-1))
        return self.a + lin - self.sigma2 * trB - quad

    def user(self, l: int, k: int, kind: SurrogateKind) -> "SurrogateCoefficients":
        return SurrogateCoefficients(
            a=float(self.a[l, k]), A=self.A[l, k], B=self.B[l, k],
            quad_mask=self.quad_mask[l, k], sigma2=self.sigma2, kind=kind, l=l, k=k)


@dataclass(frozen=True)
class SurrogateCoefficients:
    a: float
    A: np.ndarray          # (L, K+1, N_u, d)
    B: np.ndarray          # (N_u, N_u)
    quad_mask: np.ndarray  # (L, K+1)
    sigma2: float
    kind: SurrogateKind
    l: int
    k: int

    def value_from_blocks(self, Y_user: np.ndarray) -> float:
        """``Y_user[i, j] = H_{lk,i} W_{ij}``."""
        lin = 2.0 * np.einsum("ijad,ijad->", self.A, Y_user.conj()).real
        Ym = Y_user * self.quad_mask[..., None, None]
        quad = np.einsum("ijad,ab,ijbd->", Ym.conj(), self.B, Y_user).real
        return float(self.a + lin - self.sigma2 * np.trace(self.B).real - quad)

    def value_at_precoders(self, H_bar: np.ndarray, blocks: np.ndarray) -> float:
        Y = np.einsum("iab,ijbd->ijad", H_bar[self.l, self.k], blocks)
        return self.value_from_blocks(Y)

    def value_at_ris(self, ch: ChannelSet, W_bar: np.ndarray, upsilon: np.ndarray) -> float:
        H = effective_channels(ch, upsilon)
        Y = np.einsum("iab,ijbd->ijad", H[self.l, self.k], W_bar)
        return self.value_from_blocks(Y)


def _interference_mask(L: int, K: int) -> np.ndarray:
    """Blocks inside ``D_c,lk``: every private block of the own cell, everything of other cells."""
    mask = np.ones((L, K, L, K + 1), dtype=bool)
    for l in range(L):
        mask[l, :, l, K] = False
    return mask


def private_bank(exp: ExpansionPoint, strict: bool = True) -> SurrogateBank:
    st = exp.stats
    L, K = st.D.shape[:2]
    N_u = st.D.shape[-1]
    Y = st.Y
    D_inv = np.linalg.inv(st.D)
    Dc_inv = np.linalg.inv(st.D_c)
    DinvS = D_inv @ st.S
    sign, ld = np.linalg.slogdet(np.eye(N_u) + DinvS)
    a = ld.real - np.real(np.trace(DinvS, axis1=-2, axis2=-1))
    A = np.zeros(Y.shape[:4] + Y.shape[-2:], dtype=complex)
    ll, kk = np.meshgrid(np.arange(L), np.arange(K), indexing="ij")
    A[ll, kk, ll, kk] = D_inv @ Y[ll, kk, ll, kk]
    B = D_inv - Dc_inv
    mask = _interference_mask(L, K)
    valid = np.ones((L, K), dtype=bool)
    if exp.q_p > 0:
        zeta = 2.0 * np.real(np.trace(Dc_inv @ st.S, axis1=-2, axis2=-1))
        bad = zeta < DEGENERATE_DISPERSION
        silent = silent_private(exp) if not strict else np.zeros((L, K), dtype=bool)
        if strict and np.any(bad):
            l, k = map(int, np.argwhere(bad)[0])
            raise DegenerateExpansionError(
                f"private dispersion of user ({l}, {k}) is {zeta[l, k]:.3e}")
        # a floored tangent point keeps the sqrt bound valid, at a tiny loss of tightness
        zs = np.maximum(zeta, DEGENERATE_DISPERSION)
        kap = exp.q_p / np.sqrt(exp.n * zs)
        a = a - exp.q_p * np.sqrt(zs) / (2.0 * math.sqrt(exp.n)) - kap * N_u \
            + 2.0 * kap * exp.sigma2 * np.real(np.trace(Dc_inv, axis1=-2, axis2=-1))
        own = np.zeros((L, K, L, K + 1), dtype=bool)
        own[ll, kk, ll, kk] = True
        interf = mask & ~own
        A = A + kap[..., None, None, None, None] * interf[..., None, None] * \
            np.einsum("lkab,lkijbd->lkijad", Dc_inv, Y)
        B = B + kap[..., None, None] * (Dc_inv @ st.D @ Dc_inv)
        # a private block held at zero has rate exactly zero whatever the interference
        a = np.where(silent, 0.0, a)
        A = A * ~silent[..., None, None, None, None]
        B = B * ~silent[..., None, None]
    B = 0.5 * (B + np.swapaxes(B, -1, -2).conj())
    return SurrogateBank(a, A, B, mask, exp.sigma2, False, valid)


def silent_private(exp: ExpansionPoint) -> np.ndarray:
    """``(L, K)`` flags of private precoders that are exactly zero.

    Under the FBL metric these streams are held at zero by the precoder update:
    the dispersion penalty has unbounded slope there, so no tangent minorant
    exists that would let them restart.
    """
    blocks = exp.precoders.blocks
    K = blocks.shape[1] - 1
    return ~np.any(blocks[:, :K] != 0, axis=(2, 3))


def common_bank(exp: ExpansionPoint, active: Optional[np.ndarray] = None,
                strict: bool = True) -> SurrogateBank:
    """Common-message surrogates for users of cells flagged ``active`` (default: all)."""
    st = exp.stats
    L, K = st.D.shape[:2]
    N_u = st.D.shape[-1]
    Y = st.Y
    act = np.ones(L, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    T = st.D_c + st.S_c
    Dc_inv = np.linalg.inv(st.D_c)
    T_inv = np.linalg.inv(T)
    DinvS = Dc_inv @ st.S_c
    sign, ld = np.linalg.slogdet(np.eye(N_u) + DinvS)
    a = ld.real - np.real(np.trace(DinvS, axis1=-2, axis2=-1))
    A = np.zeros(Y.shape[:4] + Y.shape[-2:], dtype=complex)
    ll = np.arange(L)
    for l in range(L):
        A[l, :, l, K] = Dc_inv[l] @ Y[l, :, l, K]
    B = Dc_inv - T_inv
    mask = np.ones((L, K, L, K + 1), dtype=bool)
    valid = np.repeat(act[:, None], K, axis=1)
    if exp.q_c > 0:
        zeta = 2.0 * np.real(np.trace(T_inv @ st.S_c, axis1=-2, axis2=-1))
        bad = (zeta < DEGENERATE_DISPERSION) & valid
        if strict and np.any(bad):
            l, k = map(int, np.argwhere(bad)[0])
            raise DegenerateExpansionError(
                f"common dispersion of user ({l}, {k}) is {zeta[l, k]:.3e}")
        zs = np.maximum(zeta, DEGENERATE_DISPERSION)
        kap = np.where(valid, exp.q_c / np.sqrt(exp.n * zs), 0.0)
        a = a - exp.q_c * np.sqrt(zs) / (2.0 * math.sqrt(exp.n)) - kap * N_u \
            + 2.0 * kap * exp.sigma2 * np.real(np.trace(T_inv, axis1=-2, axis2=-1))
        interf = _interference_mask(L, K)
        A = A + kap[..., None, None, None, None] * interf[..., None, None] * \
            np.einsum("lkab,lkijbd->lkijad", T_inv, Y)
        B = B + kap[..., None, None] * (T_inv @ st.D_c @ T_inv)
    a = np.where(valid, a, 0.0)
    A = A * valid[..., None, None, None, None]
    B = B * valid[..., None, None]
    B = 0.5 * (B + np.swapaxes(B, -1, -2).conj())
    return SurrogateBank(a, A, B, mask, exp.sigma2, True, valid)


def build_private_surrogate_W(exp: ExpansionPoint, cfg: NetworkConfig, l: int, k: int) -> SurrogateCoefficients:
    return private_bank(exp).user(l, k, SurrogateKind.PRIVATE_W)


def build_common_surrogate_W(exp: ExpansionPoint, cfg: NetworkConfig, l: int, k: int) -> SurrogateCoefficients:
    act = np.zeros(exp.stats.D.shape[0], dtype=bool)
    act[l] = True
    return common_bank(exp, act).user(l, k, SurrogateKind.COMMON_W)


def build_surrogates_RIS(exp: ExpansionPoint, cfg: NetworkConfig, l: int, k: int):
    """Private and common surrogates in the RIS coefficients (precoders frozen)."""
    act = np.zeros(exp.stats.D.shape[0], dtype=bool)
    act[l] = True
    return (private_bank(exp).user(l, k, SurrogateKind.PRIVATE_RIS),
            common_bank(exp, act).user(l, k, SurrogateKind.COMMON_RIS))


def user_blocks(H: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    return received_blocks(H, blocks)
