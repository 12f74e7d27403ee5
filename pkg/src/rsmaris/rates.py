"""Shannon and finite-blocklength rates, dispersion, EE and latency helpers.

All rates are in nats per channel use.  Matrix arguments may be single
``N x N`` matrices or stacks ``(..., N, N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import erfcinv

from .errors import DomainError, SingularityError
from .model import LN2, NetworkConfig, PrecoderSet

_COND_LIMIT = 1e12


def inverse_q(eps: float) -> float:
    """Inverse of the Gaussian tail function ``Q(x) = P[N(0,1) > x]``."""
    if not (0.0 < eps < 1.0):
        raise DomainError(f"inverse_q requires 0 < eps < 1, got {eps!r}")
    return float(math.sqrt(2.0) * erfcinv(2.0 * eps))


@dataclass(frozen=True)
class LinkStatistics:
    """Desired-signal covariance ``S`` and interference-plus-noise covariance ``D``."""

    S: np.ndarray
    D: np.ndarray
    sigma2: float = 1.0


class FBLRateReport(NamedTuple):
    shannon: float
    dispersion: float
    penalty: float
    fbl: float
    fbl_clamped: float


def _herm(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2).conj())


def _guarded(D: np.ndarray, sigma2: float) -> np.ndarray:
    D = _herm(np.asarray(D, dtype=complex))
    if D.ndim == 2:
        cond = np.linalg.cond(D)
        if not np.isfinite(cond):
            raise SingularityError("interference-plus-noise covariance is singular")
        if cond > _COND_LIMIT:
            D = D + 1e-12 * sigma2 * np.eye(D.shape[0])
    return D


def _chol(A: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("matrix is not numerically positive definite") from exc


def logdet_ratio(S: np.ndarray, D: np.ndarray) -> np.ndarray:
    """``ln|I + D^{-1} S|`` through the whitened matrix ``L^{-1} S L^{-H}``."""
    Lc = _chol(D)
    X = np.linalg.solve(Lc, S)
    Mw = np.linalg.solve(Lc, np.swapaxes(X, -1, -2).conj())
    Mw = _herm(Mw)
    n = S.shape[-1]
    Lm = _chol(np.eye(n) + Mw)
    return 2.0 * np.sum(np.log(np.real(np.diagonal(Lm, axis1=-2, axis2=-1))), axis=-1)


def trace_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``Re Tr(B A^{-1})`` for Hermitian ``A``."""
    X = np.linalg.solve(A, B)
    return np.real(np.trace(X, axis1=-2, axis2=-1))


def shannon_rate(ls: LinkStatistics) -> float:
    D = _guarded(ls.D, ls.sigma2)
    S = _herm(np.asarray(ls.S, dtype=complex))
    return float(max(logdet_ratio(S, D), 0.0))


def achievable_dispersion(ls: LinkStatistics) -> float:
    """``2 Tr(S (D + S)^{-1})``."""
    S = _herm(np.asarray(ls.S, dtype=complex))
    T = _guarded(np.asarray(ls.D, dtype=complex) + S, ls.sigma2)
    if not np.isfinite(np.linalg.cond(T)):
        raise SingularityError("D + S is singular")
    return float(2.0 * trace_solve(T, S))


def optimal_dispersion(ls: LinkStatistics) -> float:
    """``Tr(I - (I + D^{-1} S)^{-2})``; diagnostic only."""
    D = _guarded(ls.D, ls.sigma2)
    S = _herm(np.asarray(ls.S, dtype=complex))
    n = S.shape[-1]
    G = np.eye(n) + np.linalg.solve(D, S)
    Gi = np.linalg.inv(G)
    return float(np.real(np.trace(np.eye(n) - Gi @ Gi)))


def fbl_rate(ls: LinkStatistics, n: int, eps: float) -> FBLRateReport:
    """Normal-approximation rate ``ln|I + D^{-1}S| - Q^{-1}(eps) sqrt(zeta / n)``."""
    if n < 1:
        raise DomainError("block length must be >= 1")
    if not (0.0 < eps < 0.5):
        raise DomainError("eps must lie in (0, 0.5)")
    shannon = shannon_rate(ls)
    zeta = achievable_dispersion(ls)
    penalty = inverse_q(eps) * math.sqrt(max(zeta, 0.0) / n)
    fbl = shannon - penalty
    return FBLRateReport(shannon, zeta, penalty, fbl, max(0.0, fbl))


# ---------------------------------------------------------------------------
# Network-level quantities
# ---------------------------------------------------------------------------

class ReceivedStatistics(NamedTuple):
    """Per-user covariance matrices, each of shape ``(L, K, N_u, N_u)``."""

    D: np.ndarray    # private decoding: interference + noise
    D_c: np.ndarray  # common decoding: D + S
    S: np.ndarray    # own private signal
    S_c: np.ndarray  # own common signal
    Y: np.ndarray    # received blocks H_{lk,i} W_{ij}, shape (L, K, L, K+1, N_u, d)


def received_blocks(H: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """``Y[l,k,i,j] = H[l,k,i] @ W[i,j]``."""
    return np.einsum("lkiab,ijbd->lkijad", H, blocks, optimize=True)


def received_statistics(H: np.ndarray, blocks: np.ndarray, sigma2: float) -> ReceivedStatistics:
    L, K = H.shape[0], H.shape[1]
    N_u = H.shape[3]
    Y = received_blocks(H, blocks)
    R = np.einsum("lkijad,lkijbd->lkijab", Y, Y.conj(), optimize=True)
    own = np.arange(L)
    # everything a user hears from other cells
    total_other = R.sum(axis=3).sum(axis=2) - R[own, :, own].sum(axis=2)
    own_private = R[own, :, own][:, :, :K].sum(axis=2)
    D_c = sigma2 * np.eye(N_u) + own_private + total_other
    kk = np.arange(K)
    S = R[own[:, None], kk[None, :], own[:, None], kk[None, :]]
    S_c = R[own, :, own][:, :, K]
    D = D_c - S
    return ReceivedStatistics(_herm(D), _herm(D_c), _herm(S), _herm(S_c), Y)


def _channels(ch, ris) -> np.ndarray:
    """Effective channel array from either a ``ChannelSet`` plus phases or a ready array."""
    if isinstance(ch, np.ndarray):
        return ch
    from .channels import effective_channels
    ups = None if ris is None else getattr(ris, "upsilon", ris)
    return effective_channels(ch, ups)


def interference_covariances(ch, ris, precoders: PrecoderSet, l: int, k: int,
                             sigma2: float = 1.0):
    """``(D_lk, D_c,lk, S_lk, S_c,lk)`` for one user.

    ``ch`` is a ``ChannelSet`` (with ``ris``) or an effective-channel array
    of shape ``(L, K, L, N_u, N_BS)`` (``ris`` ignored).
    """
    H = _channels(ch, ris)
    L, K = H.shape[0], H.shape[1]
    W = precoders.blocks
    N_u = H.shape[3]
    D_c = sigma2 * np.eye(N_u, dtype=complex)
    for j in range(K):
        Y = H[l, k, l] @ W[l, j]
        D_c = D_c + Y @ Y.conj().T
    for i in range(L):
        if i == l:
            continue
        Ci = W[i].transpose(1, 0, 2).reshape(W.shape[2], -1)
        D_c = D_c + H[l, k, i] @ (Ci @ Ci.conj().T) @ H[l, k, i].conj().T
    Ys = H[l, k, l] @ W[l, k]
    S = Ys @ Ys.conj().T
    Yc = H[l, k, l] @ W[l, K]
    S_c = Yc @ Yc.conj().T
    return D_c - S, D_c, S, S_c


class NetworkRates(NamedTuple):
    """Shannon parts, dispersions and FBL values (raw) for every user."""

    shannon_p: np.ndarray
    zeta_p: np.ndarray
    r_p: np.ndarray
    shannon_c: np.ndarray
    zeta_c: np.ndarray
    r_c: np.ndarray


def network_rates(H: np.ndarray, blocks: np.ndarray, sigma2: float, n: float,
                  q_c: float, q_p: float, stats: ReceivedStatistics | None = None) -> NetworkRates:
    """Private and common FBL rates of all users.

    ``q_c`` and ``q_p`` are the ``Q^{-1}(eps)`` factors; zero gives Shannon rates.
    """
    st = received_statistics(H, blocks, sigma2) if stats is None else stats
    sh_p = logdet_ratio(st.S, st.D)
    z_p = 2.0 * trace_solve(st.D_c, st.S)
    sh_c = logdet_ratio(st.S_c, st.D_c)
    z_c = 2.0 * trace_solve(st.D_c + st.S_c, st.S_c)
    z_p = np.maximum(z_p, 0.0)
    z_c = np.maximum(z_c, 0.0)
    r_p = sh_p - q_p * np.sqrt(z_p / n)
    r_c = sh_c - q_c * np.sqrt(z_c / n)
    return NetworkRates(sh_p, z_p, r_p, sh_c, z_c, r_c)


def common_decode_rate(ch, ris, precoders: PrecoderSet, l: int, k: int, n: int, eps_c: float,
                       sigma2: float = 1.0) -> float:
    _, D_c, _, S_c = interference_covariances(ch, ris, precoders, l, k, sigma2)
    return fbl_rate(LinkStatistics(S_c, D_c, sigma2), n, eps_c).fbl


def common_rate_of_cell(ch, ris, precoders: PrecoderSet, l: int, n: int, eps_c: float,
                        sigma2: float = 1.0) -> float:
    """Transmittable common rate: the weakest user's decoding rate."""
    H = _channels(ch, ris)
    return min(common_decode_rate(H, None, precoders, l, k, n, eps_c, sigma2)
               for k in range(precoders.K))


def private_rate(ch, ris, precoders: PrecoderSet, l: int, k: int, n: int, eps_p: float,
                 sigma2: float = 1.0) -> float:
    """Private rate; its dispersion ``2 Tr(S D_c^{-1})`` is the generic form on ``(S, D)``."""
    D, _, S, _ = interference_covariances(ch, ris, precoders, l, k, sigma2)
    return fbl_rate(LinkStatistics(S, D, sigma2), n, eps_p).fbl


def user_rate(t, r_p):
    return t + r_p


def user_power(blocks: np.ndarray, cfg: NetworkConfig, p_c: float | None = None) -> np.ndarray:
    """``p_lk = p_c + eta ||W_lk||^2 + (eta/K) ||W_l||^2`` for every user."""
    p_c = cfg.p_c if p_c is None else p_c
    K = blocks.shape[1] - 1
    pw = np.sum(np.abs(blocks) ** 2, axis=(-2, -1))
    return p_c + cfg.eta * pw[:, :K] + (cfg.eta / K) * pw[:, K:K + 1]


def user_ee(rate, precoders: PrecoderSet, l: int, k: int, cfg: NetworkConfig,
            p_c: float | None = None) -> float:
    p = user_power(precoders.blocks, cfg, p_c)[l, k]
    return float(rate / p)


def combine_error_prob(eps_c: float, eps_p: float) -> float:
    return eps_c + (1.0 - eps_c) * eps_p


def latency_threshold(n: float, omega: float, tau: float) -> float:
    """Minimum rate (b/s/Hz) that delivers ``2n`` symbols within ``tau`` seconds."""
    if not omega * tau > 0:
        raise DomainError("omega * tau must be > 0")
    return 2.0 * n / (omega * tau)


def latency_threshold_nats(n: float, omega: float, tau: float) -> float:
    return latency_threshold(n, omega, tau) * LN2
