"""Data model: network configuration, precoders, RIS phases and allocations.

Conventions used throughout the package:

* precoders of all base stations live in one complex array of shape
  ``(L, K + 1, N_BS, d)``; slots ``0..K-1`` hold the private precoders of the
  users of a cell and slot ``K`` holds the common precoder;
* rates are natural-log based (nats per channel use); conversion to bits
  happens only when reporting;
* the power budget ``P`` is linear and relative to the noise variance.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional, Sequence

import numpy as np

from .errors import ValidationError

LN2 = math.log(2.0)


class StreamMode(str, enum.Enum):
    FULL = "full"
    SINGLE = "single"


class FeasibilitySet(str, enum.Enum):
    UNIT_DISC = "unit_disc"
    UNIT_MODULUS = "unit_modulus"


def nats_to_bits(x):
    return x / LN2


def bits_to_nats(x):
    return x * LN2


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


# ---------------------------------------------------------------------------
# JSON helpers for complex arrays
# ---------------------------------------------------------------------------

def complex_to_json(a) -> list:
    """Row-major nested lists whose leaves are ``[re, im]`` pairs."""
    a = np.asarray(a, dtype=complex)
    stacked = np.stack([a.real, a.imag], axis=-1)
    return stacked.tolist()


def complex_from_json(data, shape: Optional[Sequence[int]] = None) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.size == 0:
        if shape is None:
            raise ValueError("cannot infer the shape of an empty complex array")
        return np.zeros(tuple(shape), dtype=complex)
    out = arr[..., 0] + 1j * arr[..., 1]
    if shape is not None:
        out = out.reshape(tuple(shape))
    return out


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometryModel:
    """Placement of BSs, RISs and user drop regions plus path-loss parameters.

    Positions are 3-D coordinates in metres.  Users of cell ``l`` are dropped
    uniformly in a horizontal disc of radius ``user_radius`` around
    ``user_centers[l]`` unless ``user_positions`` pins them explicitly.

    Large-scale gains are ``10**((noise_offset_db - ref_loss_db)/10) * d**-exp``
    for the direct and BS-RIS links; the RIS-user leg omits the noise offset so
    that the cascaded link is normalised by the noise power exactly once.
    """

    bs_positions: tuple
    ris_positions: tuple
    user_centers: tuple
    user_radius: float = 50.0
    user_height: float = 1.5
    user_positions: Optional[tuple] = None
    pl_exp_direct: float = 3.75
    pl_exp_ris: float = 2.2
    ref_loss_db: float = 30.0
    noise_offset_db: float = 100.0
    rician_k: float = 3.0

    @classmethod
    def default(cls, L: int, M: int) -> "GeometryModel":
        """BSs 200 m apart; RIS ``m`` 20 m from BS ``m mod L``; users around the RIS."""
        bs = [(200.0 * l, 0.0, 10.0) for l in range(L)]
        ris = []
        for m in range(M):
            home = m % L
            angle = 2.0 * math.pi * (m // L) / max(1, math.ceil(M / L))
            ris.append((bs[home][0] + 20.0 * math.cos(angle),
                        20.0 * math.sin(angle), 5.0))
        centers = []
        for l in range(L):
            own = [r for m, r in enumerate(ris) if m % L == l]
            if own:
                centers.append((own[0][0], own[0][1]))
            else:
                centers.append((bs[l][0] + 20.0, 0.0))
        return cls(tuple(bs), tuple(ris), tuple(centers))

    def validate(self, L: int, M: int, K: int) -> None:
        if len(self.bs_positions) != L:
            raise ValidationError("geometry.bs_positions", f"expected {L} entries")
        if len(self.ris_positions) != M:
            raise ValidationError("geometry.ris_positions", f"expected {M} entries")
        if len(self.user_centers) != L:
            raise ValidationError("geometry.user_centers", f"expected {L} entries")
        if self.user_positions is not None:
            up = np.asarray(self.user_positions, dtype=float)
            if up.shape != (L, K, 3):
                raise ValidationError("geometry.user_positions", f"expected shape {(L, K, 3)}")
        if not (self.pl_exp_direct > 0 and self.pl_exp_ris > 0):
            raise ValidationError("geometry.pl_exp", "path-loss exponents must be > 0")
        if not self.rician_k >= 0:
            raise ValidationError("geometry.rician_k", "Rician factor must be >= 0")
        if not self.user_radius >= 0:
            raise ValidationError("geometry.user_radius", "must be >= 0")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for key in ("bs_positions", "ris_positions", "user_centers", "user_positions"):
            if d[key] is not None:
                d[key] = np.asarray(d[key], dtype=float).tolist()
        if math.isinf(d["rician_k"]):
            d["rician_k"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeometryModel":
        d = dict(d)
        for key in ("bs_positions", "ris_positions", "user_centers", "user_positions"):
            if d.get(key) is not None:
                d[key] = _to_tuple(d[key])
        if "rician_k" in d:
            d["rician_k"] = float(d["rician_k"])
        return cls(**d)


def _to_tuple(x):
    if isinstance(x, (list, tuple)):
        return tuple(_to_tuple(v) for v in x)
    return float(x)


# ---------------------------------------------------------------------------
# Network configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkConfig:
    L: int
    K: int
    M: int
    N_BS: int
    N_u: int
    N_RIS: int
    P: float
    sigma2: float = 1.0
    n: int = 256
    eps_c: float = 5e-6
    eps_p: float = 5e-6
    omega: float = 1e7
    tau: float = 1e-3
    alpha: Optional[tuple] = None
    lam: Optional[tuple] = None
    p_c: float = 1.0
    eta: float = 1.25
    ris_power: float = 1.0
    geometry: Optional[GeometryModel] = None
    feasibility_set: FeasibilitySet = FeasibilitySet.UNIT_DISC

    def __post_init__(self):
        L, K = self.L, self.K
        if self.alpha is None and isinstance(L, int) and isinstance(K, int) and L > 0 and K > 0:
            object.__setattr__(self, "alpha", tuple((1.0,) * K for _ in range(L)))
        elif self.alpha is not None:
            object.__setattr__(self, "alpha", _to_tuple(self.alpha))
        if self.lam is None and isinstance(L, int) and isinstance(K, int) and L > 0 and K > 0:
            object.__setattr__(self, "lam", tuple((1.0,) * K for _ in range(L)))
        elif self.lam is not None:
            object.__setattr__(self, "lam", _to_tuple(self.lam))
        if self.geometry is None and isinstance(L, int) and isinstance(self.M, int) \
                and L > 0 and self.M >= 0:
            object.__setattr__(self, "geometry", GeometryModel.default(L, self.M))
        object.__setattr__(self, "feasibility_set", FeasibilitySet(self.feasibility_set))

    @property
    def alpha_array(self) -> np.ndarray:
        return np.asarray(self.alpha, dtype=float).reshape(self.L, self.K)

    @property
    def lam_array(self) -> np.ndarray:
        return np.asarray(self.lam, dtype=float).reshape(self.L, self.K)

    @property
    def P_array(self) -> np.ndarray:
        return np.full(self.L, float(self.P))

    def replace(self, **changes) -> "NetworkConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "geometry":
                v = v.to_dict() if v is not None else None
            elif f.name == "feasibility_set":
                v = v.value
            elif f.name in ("alpha", "lam") and v is not None:
                v = [list(row) for row in v]
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        if "P_dB" in d:
            d["P"] = db_to_linear(float(d.pop("P_dB")))
        if "eps" in d:
            eps = float(d.pop("eps"))
            d.setdefault("eps_c", eps / 2.0)
            d.setdefault("eps_p", eps / 2.0)
        if d.get("geometry") is not None and isinstance(d["geometry"], dict):
            d["geometry"] = GeometryModel.from_dict(d["geometry"])
        return cls(**d)


def validate_config(cfg: NetworkConfig) -> NetworkConfig:
    """Check every invariant of ``cfg``; raise ``ValidationError`` on the first failure."""

    for name in ("L", "K", "N_BS", "N_u", "N_RIS", "n"):
        v = getattr(cfg, name)
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
            raise ValidationError(name, "must be an integer >= 1")
    if not isinstance(cfg.M, (int, np.integer)) or isinstance(cfg.M, bool) or cfg.M < 0:
        raise ValidationError("M", "must be an integer >= 0")
    if not (np.isfinite(cfg.P) and cfg.P > 0):
        raise ValidationError("P", "power budget must be > 0")
    if not (np.isfinite(cfg.sigma2) and cfg.sigma2 > 0):
        raise ValidationError("sigma2", "noise variance must be > 0")
    for name in ("eps_c", "eps_p"):
        v = getattr(cfg, name)
        if not (0.0 < v < 0.5):
            raise ValidationError(name, "must lie in (0, 0.5)")
    if not cfg.omega > 0:
        raise ValidationError("omega", "bandwidth must be > 0")
    if not cfg.tau > 0:
        raise ValidationError("tau", "latency target must be > 0")
    for name in ("alpha", "lam"):
        w = np.asarray(getattr(cfg, name), dtype=float)
        if w.shape != (cfg.L, cfg.K):
            raise ValidationError(name, f"expected shape {(cfg.L, cfg.K)}")
        if not np.all(w > 0):
            raise ValidationError(name, "weights must be > 0")
    if not cfg.p_c > 0:
        raise ValidationError("p_c", "static power must be > 0")
    if not cfg.eta >= 1:
        raise ValidationError("eta", "inverse amplifier efficiency must be >= 1")
    if not cfg.ris_power >= 0:
        raise ValidationError("ris_power", "must be >= 0")
    cfg.geometry.validate(cfg.L, cfg.M, cfg.K)
    return cfg


# ---------------------------------------------------------------------------
# Decision variables
# ---------------------------------------------------------------------------

class PrecoderSet:
    """Common and private precoders of every BS.

    ``blocks[l, k]`` for ``k < K`` is the private precoder of user ``(l, k)``;
    ``blocks[l, K]`` is the common precoder of BS ``l``.
    """

    __slots__ = ("blocks", "stream_mode")

    def __init__(self, W_common, W_private, stream_mode: StreamMode = StreamMode.FULL):
        W_common = np.asarray(W_common, dtype=complex)
        W_private = np.asarray(W_private, dtype=complex)
        if W_private.ndim != 4 or W_common.ndim != 3:
            raise ValueError("W_private must be (L, K, N_BS, d) and W_common (L, N_BS, d)")
        blocks = np.concatenate([W_private, W_common[:, None]], axis=1)
        self._init(blocks, stream_mode)

    def _init(self, blocks, stream_mode):
        stream_mode = StreamMode(stream_mode)
        d = blocks.shape[-1]
        if stream_mode is StreamMode.SINGLE and d != 1:
            raise ValueError("single-stream precoders must have one column")
        if stream_mode is StreamMode.FULL and d != blocks.shape[-2]:
            raise ValueError("full-stream precoders must be N_BS x N_BS")
        object.__setattr__(self, "blocks", _frozen(blocks))
        object.__setattr__(self, "stream_mode", stream_mode)

    def __setattr__(self, key, value):
        raise AttributeError("PrecoderSet is immutable")

    @classmethod
    def from_blocks(cls, blocks, stream_mode: StreamMode = StreamMode.FULL) -> "PrecoderSet":
        obj = cls.__new__(cls)
        obj._init(np.asarray(blocks, dtype=complex), stream_mode)
        return obj

    @classmethod
    def zeros(cls, cfg: NetworkConfig, stream_mode: StreamMode = StreamMode.FULL) -> "PrecoderSet":
        d = cfg.N_BS if StreamMode(stream_mode) is StreamMode.FULL else 1
        return cls.from_blocks(np.zeros((cfg.L, cfg.K + 1, cfg.N_BS, d), complex), stream_mode)

    @property
    def L(self) -> int:
        return self.blocks.shape[0]

    @property
    def K(self) -> int:
        return self.blocks.shape[1] - 1

    @property
    def W_common(self) -> np.ndarray:
        return self.blocks[:, -1]

    @property
    def W_private(self) -> np.ndarray:
        return self.blocks[:, :-1]

    def to_dict(self) -> dict:
        return {
            "stream_mode": self.stream_mode.value,
            "shape": list(self.blocks.shape),
            "W_common": complex_to_json(self.W_common),
            "W_private": complex_to_json(self.W_private),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrecoderSet":
        L, K1, nb, ds = d["shape"]
        wc = complex_from_json(d["W_common"], (L, nb, ds))
        wp = complex_from_json(d["W_private"], (L, K1 - 1, nb, ds))
        return cls(wc, wp, d["stream_mode"])


class RISPhases:
    """Diagonal reflection coefficients, one row per RIS."""

    __slots__ = ("upsilon", "feasibility_set")

    def __init__(self, upsilon, feasibility_set: FeasibilitySet = FeasibilitySet.UNIT_DISC,
                 check: bool = True):
        ups = np.asarray(upsilon, dtype=complex)
        if ups.ndim != 2:
            raise ValueError("upsilon must be a 2-D array (M, N_RIS)")
        fs = FeasibilitySet(feasibility_set)
        if check and ups.size:
            mod = np.abs(ups)
            if fs is FeasibilitySet.UNIT_DISC and np.max(mod) > 1 + 1e-12:
                raise ValueError("unit-disc coefficients must satisfy |v| <= 1")
            if fs is FeasibilitySet.UNIT_MODULUS and np.max(np.abs(mod - 1)) > 1e-12:
                raise ValueError("unit-modulus coefficients must satisfy |v| = 1")
        object.__setattr__(self, "upsilon", _frozen(ups))
        object.__setattr__(self, "feasibility_set", fs)

    def __setattr__(self, key, value):
        raise AttributeError("RISPhases is immutable")

    @property
    def M(self) -> int:
        return self.upsilon.shape[0]

    @classmethod
    def random(cls, M: int, N_RIS: int, rng: np.random.Generator,
               feasibility_set: FeasibilitySet = FeasibilitySet.UNIT_DISC) -> "RISPhases":
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(M, N_RIS))
        return cls(np.exp(1j * phase), feasibility_set)

    @classmethod
    def empty(cls, feasibility_set: FeasibilitySet = FeasibilitySet.UNIT_DISC) -> "RISPhases":
        return cls(np.zeros((0, 0), complex), feasibility_set)

    def to_dict(self) -> dict:
        return {
            "feasibility_set": self.feasibility_set.value,
            "shape": list(self.upsilon.shape),
            "upsilon": complex_to_json(self.upsilon),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RISPhases":
        ups = complex_from_json(d["upsilon"], d["shape"])
        return cls(ups, d["feasibility_set"])


@dataclass(frozen=True)
class CommonRateSplit:
    """Portion ``t[l, k]`` (nats) of the common message assigned to user ``(l, k)``."""

    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.size and np.min(t) < 0:
            raise ValueError("common-rate portions must be nonnegative")
        object.__setattr__(self, "t", _frozen(t))

    @classmethod
    def zeros(cls, L: int, K: int) -> "CommonRateSplit":
        return cls(np.zeros((L, K)))


@dataclass(frozen=True)
class Allocation:
    """Result of an optimisation run.

    ``rates`` are raw per-user rates ``t + r_p`` in nats; ``ees`` are the
    matching energy efficiencies in nats/Joule.  ``objective`` is the min
    weighted rate (or EE) in the same units and ``trace`` the outer-loop
    history of that objective.
    """

    precoders: PrecoderSet
    ris: RISPhases
    split: CommonRateSplit
    rates: np.ndarray
    ees: np.ndarray
    objective: float
    objective_kind: str = "max_min_rate"
    trace: tuple = ()
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "objective_kind": self.objective_kind,
            "objective": self.objective,
            "objective_bits": nats_to_bits(self.objective),
            "precoders": self.precoders.to_dict(),
            "ris": self.ris.to_dict(),
            "t": np.asarray(self.split.t).tolist(),
            "rates": np.asarray(self.rates).tolist(),
            "ees": np.asarray(self.ees).tolist(),
            "trace": [dict(r) for r in self.trace],
            "info": _jsonable(self.info),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Allocation":
        return cls(
            precoders=PrecoderSet.from_dict(d["precoders"]),
            ris=RISPhases.from_dict(d["ris"]),
            split=CommonRateSplit(np.asarray(d["t"], dtype=float)),
            rates=np.asarray(d["rates"], dtype=float),
            ees=np.asarray(d["ees"], dtype=float),
            objective=float(d["objective"]),
            objective_kind=d.get("objective_kind", "rate"),
            trace=tuple(d.get("trace", ())),
            info=dict(d.get("info", {})),
        )


def _jsonable(x: Any):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, enum.Enum):
        return x.value
    return x


# ---------------------------------------------------------------------------
# Transmit statistics
# ---------------------------------------------------------------------------

def transmit_covariance(p: PrecoderSet, l: int) -> np.ndarray:
    """``C_l = W_l W_l^H + sum_k W_lk W_lk^H``."""
    if not 0 <= l < p.L:
        raise IndexError(f"cell index {l} out of range")
    W = p.blocks[l]
    return np.einsum("jad,jbd->ab", W, W.conj())


def transmit_power(p: PrecoderSet, l: int) -> float:
    if not 0 <= l < p.L:
        raise IndexError(f"cell index {l} out of range")
    return float(np.sum(np.abs(p.blocks[l]) ** 2))


def all_transmit_covariances(blocks: np.ndarray) -> np.ndarray:
    return np.einsum("ljad,ljbd->lab", blocks, blocks.conj())
