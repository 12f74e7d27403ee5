import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rsmaris.model import NetworkConfig

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_psd(rng, n, rank=None, scale=1.0):
    G = crandn(rng, n, rank or n)
    return scale * (G @ G.conj().T)


def random_pd(rng, n, floor=0.5):
    return random_psd(rng, n) + floor * np.eye(n)


def small_config(**kw):
    base = dict(L=2, K=2, M=1, N_BS=2, N_u=2, N_RIS=4, P=10.0)
    base.update(kw)
    return NetworkConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_channel_set(rng, L, K, M, N_BS, N_u, N_RIS, ris_gain=1.0):
    from rsmaris.channels import ChannelSet
    return ChannelSet(crandn(rng, L, K, L, N_u, N_BS),
                      ris_gain * crandn(rng, L, K, M, N_u, N_RIS),
                      crandn(rng, M, L, N_RIS, N_BS))


def random_blocks(rng, L, K, N_BS, scale=1.0):
    return scale * crandn(rng, L, K + 1, N_BS, N_BS)


def random_upsilon(rng, M, N_RIS, modulus=False):
    ph = np.exp(2j * np.pi * rng.random((M, N_RIS)))
    return ph if modulus else ph * np.sqrt(rng.random((M, N_RIS)))


def random_expansion(rng, d=2, L=2, K=2, M=1, N_RIS=4, n=None, shannon=False):
    """A random, nondegenerate expansion point with i.i.d. channels."""
    from rsmaris.model import PrecoderSet, RISPhases
    from rsmaris.surrogates import ExpansionPoint
    n = int(rng.choice([64, 256, 1024])) if n is None else n
    cfg = NetworkConfig(L=L, K=K, M=M, N_BS=d, N_u=d, N_RIS=N_RIS, P=10.0, n=n,
                        eps_c=1e-5, eps_p=1e-5)
    ch = random_channel_set(rng, L, K, M, d, d, N_RIS, ris_gain=0.5)
    scale = 10 ** rng.uniform(-0.5, 0.5)
    p = PrecoderSet.from_blocks(random_blocks(rng, L, K, d, scale))
    ris = RISPhases(random_upsilon(rng, M, N_RIS))
    return cfg, ch, ExpansionPoint.build(cfg, ch, p, ris, shannon=shannon)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
