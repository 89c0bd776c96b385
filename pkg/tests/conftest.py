import numpy as np
import pytest

from stochwave.grid import GridFn, GridSpec
from stochwave.models import ModelSpec, nagumo
from stochwave.modwave import solve_modified_wave
from stochwave.noiseterms import make_noise_params
from stochwave.profiles import compute_spectral, linearize, nagumo_front, solve_wave
from stochwave.simulate import PathProblem

ACCEPTANCE_LINES = []


class Setup:
    """Wave, operator and spectral data for one model/grid."""

    def __init__(self, model: ModelSpec, L: float, dx: float):
        self.model = model
        self.spec = GridSpec(L, dx, model.n_components)
        g = nagumo_front(self.spec, model.a, model.rho, model)
        self.wave = solve_wave(model, self.spec, g.phi0, g.c0)
        self.op = linearize(model, self.wave)
        self.sd = compute_spectral(model, self.wave, self.op, probe=False)
        self.psi = self.sd.psi

    def noise(self, sigma, special_case=False):
        return make_noise_params(self.model, self.wave, self.sd, sigma, special_case)

    def problem(self, sigma, special_case=False):
        p = self.noise(sigma, special_case)
        mw = solve_modified_wave(self.wave, self.op, self.sd, p)
        return PathProblem(self.model, mw, self.psi, p)

    def bump(self, amp, centre=2.0, width=1.0):
        vals = np.zeros((self.spec.n_points, self.spec.n_components))
        vals[:, 0] = amp * np.exp(-0.5 * ((self.spec.xi - centre) / width) ** 2)
        return GridFn(self.spec, vals)


@pytest.fixture(scope="session")
def nag():
    return Setup(nagumo(0.3), 30.0, 0.1)


@pytest.fixture(scope="session")
def fine():
    return Setup(nagumo(0.3), 40.0, 0.02)


@pytest.fixture(scope="session")
def quad():
    return Setup(nagumo(0.3, noise="nagumo_quadratic"), 30.0, 0.1)


@pytest.fixture(scope="session")
def acceptance():
    def record(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title} [{detail}]"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
