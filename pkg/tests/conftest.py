import numpy as np
import pytest

from qcpgm import optics
from qcpgm.simulate import DetectorModel


@pytest.fixture(scope="session")
def params():
    return optics.make_biphoton_params(405e-9, 0.5e-3, 1.0e-3, 0.455)


@pytest.fixture(scope="session")
def geometry(params):
    return optics.OpticalGeometry.with_aperture(
        3.0e5,
        camera_pixel_pitch=55e-6,
        nf_magnification=10.0,
        nf_pixels=64,
        ff_pixels=64,
        photon_wavelength=params.photon_wavelength,
    )


@pytest.fixture(scope="session")
def small_geometry(params):
    return optics.OpticalGeometry.with_aperture(
        3.0e5,
        camera_pixel_pitch=55e-6,
        nf_magnification=10.0,
        nf_pixels=16,
        ff_pixels=32,
        photon_wavelength=params.photon_wavelength,
    )


@pytest.fixture(scope="session")
def flat_target():
    return optics.gen_target("flat", (400, 400), 1.1e-6)


@pytest.fixture(scope="session")
def flat_model(flat_target, params, geometry):
    return optics.compute_far_field(flat_target, params, geometry)


@pytest.fixture(scope="session")
def small_flat_model(params, small_geometry):
    return optics.compute_far_field(optics.gen_target("flat", (120, 120), 1.1e-6), params, small_geometry)


@pytest.fixture
def ideal_detector():
    return DetectorModel(efficiency_nf=1.0, efficiency_ff=1.0, jitter_sigma=0.0, acquisition_time=1.0)


def centroid(dist, k):
    """(u, v) centroid of a ``[v, u]`` distribution on the wavenumber axis ``k``."""
    return float(dist.sum(axis=0) @ k), float(dist.sum(axis=1) @ k)


def random_stream(rng, n, duration, region, n_pixels=8):
    from qcpgm.events import make_events

    t = np.sort(rng.integers(0, duration, n)).astype(np.uint64)
    return make_events(region, rng.integers(0, n_pixels, n), rng.integers(0, n_pixels, n), t)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
