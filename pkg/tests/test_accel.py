"""The numba kernels must agree with the numpy reference implementations."""
import numpy as np
import pytest

from tubetac._accel import NUMBA_KERNELS, NUMPY_KERNELS, _numba_requested

pytestmark = pytest.mark.skipif(NUMBA_KERNELS is None, reason="numba unavailable")

rng = np.random.default_rng(7)


@pytest.mark.parametrize("penalty", [0.0, 0.01, 0.5])
def test_ridge_viterbi_parity(penalty):
    score = rng.random((40, 30))
    a = NUMPY_KERNELS.ridge_viterbi(score, 2.5, penalty)
    b = NUMBA_KERNELS.ridge_viterbi(score, 2.5, penalty)
    assert np.array_equal(a, b)


def test_ridge_viterbi_follows_a_clean_path():
    score = np.zeros((10, 20))
    path = np.array([3, 3, 4, 5, 5, 6, 7, 7, 8, 9])
    score[np.arange(10), path] = 1.0
    for k in (NUMPY_KERNELS, NUMBA_KERNELS):
        assert np.array_equal(k.ridge_viterbi(score, 2.5, 0.01), path)


def test_ridge_online_step_parity():
    acc = rng.random(25)
    frame = rng.random(25)
    assert np.allclose(NUMPY_KERNELS.ridge_online_step(acc, frame, 2.5, 0.01),
                       NUMBA_KERNELS.ridge_online_step(acc, frame, 2.5, 0.01))


@pytest.mark.parametrize("n,block", [(1, 1), (999, 1000), (10000, 1000), (10001, 7)])
def test_block_max_parity(n, block):
    x = rng.standard_normal(n)
    assert np.array_equal(NUMPY_KERNELS.block_max(x, block), NUMBA_KERNELS.block_max(x, block))


def test_max_drop_parity():
    for _ in range(20):
        v = np.cumsum(rng.standard_normal(50))
        assert NUMPY_KERNELS.max_drop(v) == pytest.approx(NUMBA_KERNELS.max_drop(v))
    assert NUMBA_KERNELS.max_drop(np.array([1.0, 2.0, 3.0])) == 0.0
    assert NUMPY_KERNELS.max_drop(np.array([])) == 0.0


def test_accumulate_phase_parity():
    f = 1300 + 50 * np.sin(np.linspace(0, 6, 44100))
    a = NUMPY_KERNELS.accumulate_phase(f, 44100.0, 0.3)
    b = NUMBA_KERNELS.accumulate_phase(f, 44100.0, 0.3)
    assert np.allclose(np.sin(a), np.sin(b), atol=1e-9)
    assert np.all((b >= 0) & (b < 2 * np.pi))


def test_env_flag(monkeypatch):
    for off in ("0", "false", "No", "off"):
        monkeypatch.setenv("TUBETAC_NUMBA", off)
        assert not _numba_requested()
    monkeypatch.setenv("TUBETAC_NUMBA", "1")
    assert _numba_requested()
