import numpy as np
import pytest

from rehearsal_memory.autodiff import ParameterStore, Rng


@pytest.fixture
def rng():
    return Rng(1234)


def store64() -> ParameterStore:
    return ParameterStore(dtype=np.float64)


def assert_close(got, want, atol=1e-6, rtol=1e-5, msg=""):
    got = np.asarray(got)
    want = np.asarray(want)
    assert got.shape == want.shape, f"{msg} shape {got.shape} vs {want.shape}"
    assert np.allclose(got, want, atol=atol, rtol=rtol), (
        f"{msg}\n got={got}\nwant={want}\ndiff={np.abs(got - want).max()}"
    )
