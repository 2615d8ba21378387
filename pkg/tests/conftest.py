import warnings

import numpy as np
import pytest

from heatcost.elliptic import CoefficientField, assemble, eigendecompose
from heatcost.geometry import Subdomain, build_domain, dilate


def exact_dirichlet_eigenvalues(n, length=1.0):
    """Eigenvalues of the three-point Dirichlet Laplacian on ``n`` interior nodes."""
    h = length / (n + 1)
    k = np.arange(1, n + 1)
    return 2.0 / h**2 * (1.0 - np.cos(k * np.pi * h / length))


@pytest.fixture(scope="session")
def small_1d():
    """Constant-coefficient problem on 63 interior nodes."""
    dom = build_domain(1, (0.0, 1.0), 63)
    op = assemble(dom, CoefficientField.constant(1.0))
    return dom, op, eigendecompose(op)


@pytest.fixture(scope="session")
def reference_1d():
    """Reference configuration: 399 interior nodes, omega = (0.45, 0.55)."""
    dom = build_domain(1, (0.0, 1.0), 399)
    op = assemble(dom, CoefficientField.constant(1.0))
    full = eigendecompose(op)
    omega = Subdomain.interval(dom, 0.45, 0.55)
    return dom, op, full, omega


@pytest.fixture(scope="session")
def reference_control(reference_1d):
    """Truncated 200-mode basis with the datum support omega_0.1."""
    dom, op, full, omega = reference_1d
    return dom, op, full.truncate(200), omega, dilate(omega, 0.1)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


#: one ``(criterion, ok, detail)`` entry per acceptance criterion, filled by test_acceptance
ACCEPTANCE_RESULTS = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} -- {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[k])
