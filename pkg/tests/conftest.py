import numpy as np
import pytest

from tubetac._accel import NUMBA_KERNELS, NUMPY_KERNELS

BACKENDS = [NUMPY_KERNELS] + ([NUMBA_KERNELS] if NUMBA_KERNELS is not None else [])


@pytest.fixture(params=BACKENDS, ids=lambda k: k.name)
def backend(request, monkeypatch):
    """Run a test once per kernel backend by swapping the active kernels."""
    import tubetac._accel as accel
    import tubetac.calibration as calibration
    import tubetac.dsp as dsp
    import tubetac.synth as synth
    for mod in (accel, calibration, dsp, synth):
        monkeypatch.setattr(mod, "kernels", request.param)
    return request.param


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
