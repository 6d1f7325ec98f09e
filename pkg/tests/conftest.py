import numpy as np
import pytest

from audiotrojan import _pykernels, kernels
from audiotrojan.audio import AudioClip
from audiotrojan.toy import SPC10, make_toy_corpus

SR = 16000

ACCEPTANCE_RESULTS = []

KERNEL_IMPLS = [pytest.param(_pykernels, id="python")]
try:
    from audiotrojan import _ckernels

    KERNEL_IMPLS.append(pytest.param(_ckernels, id="cython"))
except ImportError:
    pass


def tone(freq, seconds=1.0, amp=0.5, sr=SR):
    t = np.arange(int(round(seconds * sr))) / sr
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), sr)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["python", "cython"])
def kernel_backend(request, monkeypatch):
    """Run a test once per kernel implementation by swapping the selector."""
    if request.param == "cython":
        impl = next((p.values[0] for p in KERNEL_IMPLS if p.id == "cython"), None)
        if impl is None:
            pytest.skip("compiled kernels not built")
    else:
        impl = _pykernels
    monkeypatch.setattr(kernels, "_impl", impl)
    return request.param


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    return make_toy_corpus(root / "train")


@pytest.fixture(scope="session")
def toy_testset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toytest")
    return make_toy_corpus(root / "test", per_class=1, seed=99, prefix="t")


@pytest.fixture
def spc_classes():
    return list(SPC10)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")
