import math

import numpy as np
import pytest

from qcpgm import optics
from qcpgm.errors import EmptyDistributionError, InvalidParameterError

from conftest import centroid


def test_correlation_width_by_hand():
    # sqrt(2 * 0.455 * 1e-3 * 405e-9 / pi), evaluated independently
    p = optics.make_biphoton_params(405e-9, 0.5e-3, 1e-3, 0.455)
    assert p.delta_r == pytest.approx(1.08311e-5, rel=1e-5)
    assert p.delta_k == pytest.approx(1000.0, rel=1e-12)
    assert p.photon_wavelength == pytest.approx(810e-9)


def test_closed_forms_exact():
    for lp, sp, L, a in [(405e-9, 0.5e-3, 1e-3, 0.455), (532e-9, 1e-3, 2e-3, 1.0)]:
        p = optics.make_biphoton_params(lp, sp, L, a)
        assert abs(p.delta_r - math.sqrt(2 * a * L * lp / math.pi)) <= 1e-12 * p.delta_r
        assert abs(p.delta_k - 1 / (2 * sp)) <= 1e-12 * p.delta_k


@pytest.mark.parametrize("bad", [dict(crystal_length=0.0), dict(pump_width=-1e-3), dict(alpha=1.5)])
def test_invalid_source(bad):
    kw = dict(pump_wavelength=405e-9, pump_width=0.5e-3, crystal_length=1e-3, alpha=0.455)
    kw.update(bad)
    with pytest.raises(InvalidParameterError):
        optics.make_biphoton_params(**kw)


def test_entanglement_regime_enforced():
    # pump so narrow that delta_r exceeds the beam scale
    with pytest.raises(InvalidParameterError):
        optics.make_biphoton_params(405e-9, 5e-6, 1e-3, 0.455)


def test_biphoton_amplitude(params):
    z = np.zeros(2)
    assert optics.biphoton_amplitude(z, z, params) == 1.0
    a, b = np.array([3e-6, -1e-6]), np.array([-2e-6, 4e-6])
    assert optics.biphoton_amplitude(a, b, params) == optics.biphoton_amplitude(b, a, params)
    d = params.delta_r / 2
    val = optics.biphoton_amplitude(np.array([d, 0]), np.array([-d, 0]), params)
    assert val == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_phase_from_height():
    assert optics.target_phase_from_height(200e-9, 1.5, 810e-9) == pytest.approx(0.7757, abs=5e-5)
    assert optics.target_phase_from_height(0.0, 1.5, 810e-9) == 0.0
    # 50 nm at n = 1.5 is an optical path of 25 nm, close to lambda/32
    path = 0.5 * 50e-9
    assert 810e-9 / path == pytest.approx(32.4)
    with pytest.raises(InvalidParameterError):
        optics.target_phase_from_height(1e-7, 1.0, 810e-9)


def test_gen_target_kinds():
    flat = optics.gen_target("flat", (20, 30), 1e-6)
    assert flat.phase.shape == (20, 30)
    assert np.all(flat.phase == 0) and np.all(flat.amplitude == 1)

    step = optics.target_phase_from_height(200e-9, 1.5, 810e-9)
    star = optics.gen_target("star", (101, 101), 1e-6, step_phase=step)
    assert set(np.unique(star.phase)) == {0.0, step}
    assert np.all(star.amplitude == 1)

    bars = optics.gen_target("usaf_bars", (64, 200), 0.23e-6, bar_period=2.76e-6, n_bars=3)
    row = bars.phase[32]
    assert set(np.unique(row)) == {0.0, 1.0}
    # three bars of the given period: 362 line pairs per mm
    assert 1e-3 / 2.76e-6 == pytest.approx(362.3, abs=0.1)
    rising = np.flatnonzero(np.diff(row) > 0)
    assert len(rising) == 3
    assert np.diff(rising) * 0.23e-6 == pytest.approx([2.76e-6, 2.76e-6], abs=0.3e-6)

    cells = optics.gen_target("cell_like", (80, 80), 1e-6, cell_radius=10e-6, absorption=0.3, seed=4)
    assert 0 < cells.amplitude.min() < 1 and cells.amplitude.max() == 1.0


def test_gen_target_errors():
    with pytest.raises(InvalidParameterError):
        optics.gen_target("star", (10, 10), -1e-6)
    with pytest.raises(InvalidParameterError):
        optics.gen_target("triangle", (10, 10), 1e-6)
    with pytest.raises(InvalidParameterError):
        optics.ComplexTarget(np.full((3, 3), 1.2), np.zeros((3, 3)), 1e-6)


def test_geometry_grid(geometry):
    k = geometry.ff_wavenumbers()
    assert k[0] == pytest.approx(-3e5) and k[-1] == pytest.approx(3e5)
    assert np.allclose(k, -k[::-1])
    # k = (2 pi / lambda) * offset * pitch / f
    j = 40
    off = (j - (geometry.ff_pixels - 1) / 2) * geometry.camera_pixel_pitch
    assert k[j] == pytest.approx(2 * math.pi / geometry.photon_wavelength * off / geometry.ff_focal_length)
    assert geometry.nf_pitch == pytest.approx(5.5e-6)


def test_flat_distribution_is_gaussian(flat_model, params, geometry):
    k = geometry.ff_wavenumbers()
    # |FT of exp(-x^2 / (2 dr^2))|^2 is exp(-k^2 dr^2)
    g = np.exp(-(k**2) * params.delta_r**2)
    expected = np.outer(g, g)
    expected /= expected.sum()
    d = flat_model.distribution(20, 33)
    # the transform window stops at 4 delta_r, where the amplitude is e^-8
    assert np.max(np.abs(d - expected)) < 1e-3 * expected.max()
    u, v = centroid(d, k)
    assert abs(u) < 1e-9 and abs(v) < 1e-9


def test_normalisation(flat_model):
    assert np.allclose(flat_model.probs.sum(axis=(1, 2)), 1.0, atol=1e-9)
    assert flat_model.marginal().sum() == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("gamma", [5e4, -3e4, 1.1e5])
def test_fourier_shift(gamma, params, geometry, flat_model):
    ramp = optics.gen_target("linear_ramp", (400, 400), 1.1e-6, gradient=(gamma, 0.0))
    n = geometry.nf_pixels
    pix = [5 * n + 7, 32 * n + 32, 50 * n + 60]
    model = optics.compute_far_field(ramp, params, geometry, pixels=pix)
    k = geometry.ff_wavenumbers()
    tol = 0.1 * geometry.ff_dk
    for i, flat_i in enumerate(pix):
        u, v = centroid(model.probs[i], k)
        u0, v0 = centroid(flat_model.probs[flat_i], k)
        assert u - u0 == pytest.approx(gamma, abs=tol)
        assert abs(v - v0) < tol


def test_shift_moves_distribution(params, geometry, flat_model):
    # a ramp of exactly one FF pixel per step moves the distribution by one pixel
    gamma = 2 * geometry.ff_dk
    ramp = optics.gen_target("linear_ramp", (400, 400), 1.1e-6, gradient=(gamma, 0.0))
    d = optics.compute_far_field(ramp, params, geometry, pixels=[32 * 64 + 32]).probs[0]
    d0 = flat_model.probs[32 * 64 + 32]
    # compare the interior, away from the aperture edge where mass is lost
    inner = slice(10, 50)
    a = d[inner, inner.start + 2 : inner.stop + 2]
    b = d0[inner, inner]
    assert np.max(np.abs(a / a.sum() - b / b.sum())) < 1e-6 * b.max()


def test_point_symmetry(params, geometry):
    bump = optics.gen_target("gaussian_bump", (400, 400), 1.1e-6, bump_width=30e-6, bump_height=1.2)
    n = geometry.nf_pixels
    pts = [(10, 20), (40, 3), (31, 31)]
    pix = [iy * n + ix for ix, iy in pts] + [(n - 1 - iy) * n + (n - 1 - ix) for ix, iy in pts]
    model = optics.compute_far_field(bump, params, geometry, pixels=pix)
    for i in range(len(pts)):
        a = model.probs[i]
        b = model.probs[i + len(pts)][::-1, ::-1]
        assert np.max(np.abs(a - b)) <= 1e-12


def _quadrature_centroid(fine, params, geometry, r_s):
    """Direct sum over a finely sampled target of T(r_i) psi(r_s, r_i) exp(-i k r_i)."""
    x, y = fine.coords()
    sel_x = np.abs(x - r_s[0]) <= 4 * params.delta_r
    sel_y = np.abs(y - r_s[1]) <= 4 * params.delta_r
    xs, ys = x[sel_x], y[sel_y]
    T = fine.transmission[np.ix_(sel_y, sel_x)]
    w = np.exp(-((xs[None, :] - r_s[0]) ** 2 + (ys[:, None] - r_s[1]) ** 2) / (2 * params.delta_r**2))
    k = geometry.ff_wavenumbers()
    Ex = np.exp(-1j * np.outer(k, xs))
    Ey = np.exp(-1j * np.outer(k, ys))
    G = Ey @ (T * w) @ Ex.T
    p = np.abs(G) ** 2
    p /= p.sum()
    return centroid(p, k)


def test_star_edge_against_quadrature(params, geometry):
    step = optics.target_phase_from_height(200e-9, 1.5, 810e-9)
    kw = dict(step_phase=step, radius=160e-6, edge_width=3e-6)
    star = optics.gen_target("star", (400, 400), 1.1e-6, **kw)
    fine = optics.gen_target("star", (1600, 1600), 1.1e-6 / 4, **kw)
    n = geometry.nf_pixels
    nf = geometry.nf_coords()
    gy, gx = np.gradient(fine.phase, 1.1e-6 / 4)
    # NF pixels sitting on spoke edges, away from the centre
    picks = [(50, 40), (45, 52), (20, 10), (12, 40)]
    model = optics.compute_far_field(star, params, geometry, pixels=[iy * n + ix for ix, iy in picks])
    k = geometry.ff_wavenumbers()
    x, y = fine.coords()
    for i, (ix, iy) in enumerate(picks):
        r_s = (nf[ix], nf[iy])
        u, v = centroid(model.probs[i], k)
        uq, vq = _quadrature_centroid(fine, params, geometry, r_s)
        scale = max(abs(uq), abs(vq), 0.05 * geometry.ff_dk)
        assert abs(u - uq) < 0.02 * scale + 0.01 * geometry.ff_dk
        assert abs(v - vq) < 0.02 * scale + 0.01 * geometry.ff_dk
        # the centroid is the window-weighted local gradient
        w = np.exp(-((x[None, :] - r_s[0]) ** 2 + (y[:, None] - r_s[1]) ** 2) / params.delta_r**2)
        wgx, wgy = (w * gx).sum() / w.sum(), (w * gy).sum() / w.sum()
        assert math.hypot(u, v) == pytest.approx(math.hypot(wgx, wgy), rel=0.05, abs=0.02 * geometry.ff_dk)
    # at least one of the picks must actually sit on an edge
    assert max(abs(c) for c in np.ravel([centroid(p, k) for p in model.probs])) > geometry.ff_dk


def test_absorbing_pixel_has_no_weight(params, small_geometry):
    amp = np.ones((120, 120))
    x = (np.arange(120) - 59.5) * 1.1e-6
    X, Y = np.meshgrid(x, x)
    nf = small_geometry.nf_coords()
    hole = (np.abs(X - nf[8]) < 2.75e-6) & (np.abs(Y - nf[8]) < 2.75e-6)
    amp[hole] = 0.0
    t = optics.ComplexTarget(amp, np.zeros_like(amp), 1.1e-6)
    w = optics.nf_marginal(t, params, small_geometry)
    assert w[8, 8] == 0.0
    assert w.sum() == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(EmptyDistributionError):
        optics.conditional_ff_distribution(t, params, small_geometry, (8, 8))


def _aperture_weight(target, params, geometry, r_s, n_k=129):
    """|T(r_s)|^2 times the spectral power of T(r_i) psi inside the aperture.

    Direct quadrature on a k grid unrelated to the camera pixels.
    """
    x, y = target.coords()
    sx = np.abs(x - r_s[0]) <= 5 * params.delta_r
    sy = np.abs(y - r_s[1]) <= 5 * params.delta_r
    g = target.transmission[np.ix_(sy, sx)] * np.exp(
        -((x[sx][None, :] - r_s[0]) ** 2 + (y[sy][:, None] - r_s[1]) ** 2) / (2 * params.delta_r**2)
    )
    K = geometry.ff_half_aperture + geometry.ff_dk / 2
    k = np.linspace(-K, K, n_k)
    G = np.exp(-1j * np.outer(k, y[sy])) @ g @ np.exp(-1j * np.outer(k, x[sx])).T
    wk = np.full(n_k, k[1] - k[0])
    wk[[0, -1]] /= 2
    power = wk @ np.abs(G) ** 2 @ wk
    ix = int(np.argmin(np.abs(x - r_s[0])))
    iy = int(np.argmin(np.abs(y - r_s[1])))
    return target.amplitude[iy, ix] ** 2 * power


def test_fourth_power_amplitude_sensitivity(params, small_geometry):
    x = (np.arange(200) - 99.5) * 1.1e-6
    X, Y = np.meshgrid(x, x)
    amp = np.where(X < 0, 1 / math.sqrt(2), 1.0)
    t = optics.ComplexTarget(amp, np.zeros_like(amp), 1.1e-6)
    w = optics.nf_marginal(t, params, small_geometry)
    nf = small_geometry.nf_coords()
    ref = _aperture_weight(t, params, small_geometry, (nf[15], nf[8]))
    for ix in range(16):
        oracle = _aperture_weight(t, params, small_geometry, (nf[ix], nf[8])) / ref
        assert w[8, ix] / w[8, 15] == pytest.approx(oracle, rel=2e-3)
    # far inside the absorbing half against far outside: (1/2) * (1/2)
    assert w[8, 0] / w[8, 15] == pytest.approx(0.25, rel=0.01)


def test_full_envelope_close_to_constant(params, small_geometry):
    t = optics.gen_target("gaussian_bump", (120, 120), 1.1e-6, bump_width=15e-6)
    a = optics.compute_far_field(t, params, small_geometry, "constant", pixels=[40, 100])
    b = optics.compute_far_field(t, params, small_geometry, "full", pixels=[40, 100])
    # the pump envelope is ~1 mm wide, the field of view ~0.1 mm
    assert np.max(np.abs(a.probs - b.probs)) < 1e-3 * a.probs.max()


def test_sampling_precondition(params, small_geometry):
    coarse = optics.gen_target("flat", (20, 20), 8e-6)
    with pytest.raises(InvalidParameterError):
        optics.compute_far_field(coarse, params, small_geometry)


def test_thread_hint(monkeypatch, params, small_geometry):
    t = optics.gen_target("gaussian_bump", (120, 120), 1.1e-6, bump_width=15e-6)
    monkeypatch.setenv("QCPGM_THREADS", "1")
    a = optics.compute_far_field(t, params, small_geometry, chunk=16)
    monkeypatch.setenv("QCPGM_THREADS", "4")
    assert optics.thread_hint() == 4
    b = optics.compute_far_field(t, params, small_geometry, chunk=16)
    assert np.array_equal(a.probs, b.probs) and np.array_equal(a.mass, b.mass)
