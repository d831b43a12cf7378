import math

import numpy as np
import pytest

from qcpgm import coincidence, optics, recon, simulate
from qcpgm.errors import GridMismatchError, InvalidParameterError
from qcpgm.events import PAIR_DTYPE


def make_pairs(nf_xy, ff_xy):
    nf_xy = np.atleast_2d(nf_xy)
    ff_xy = np.atleast_2d(ff_xy)
    out = np.zeros(len(ff_xy), dtype=PAIR_DTYPE)
    out["nf_x"], out["nf_y"] = nf_xy[:, 0], nf_xy[:, 1]
    out["ff_x"], out["ff_y"] = ff_xy[:, 0], ff_xy[:, 1]
    return out


def test_centroid_at_centre_pixel(params):
    # odd FF count so a pixel sits at k = 0
    geo = optics.OpticalGeometry.with_aperture(
        3e5, camera_pixel_pitch=55e-6, nf_magnification=10, nf_pixels=4, ff_pixels=9, photon_wavelength=810e-9
    )
    cm = recon.centroid_map(make_pairs([[1, 2]] * 3, [[4, 4]] * 3), geo)
    assert cm.U[2, 1] == 0.0 and cm.V[2, 1] == 0.0
    assert cm.count[2, 1] == 3 and cm.valid.sum() == 1
    assert np.isnan(cm.U[0, 0])
    sym = recon.centroid_map(make_pairs([[0, 0]] * 4, [[0, 3], [8, 5], [2, 4], [6, 4]]), geo)
    assert sym.U[0, 0] == pytest.approx(0.0, abs=1e-9) and sym.V[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_centroid_rejects_foreign_pixels(small_geometry):
    with pytest.raises(InvalidParameterError):
        recon.centroid_map(make_pairs([[99, 0]], [[0, 0]]), small_geometry)


def test_background_correction_algebra(small_geometry):
    k = small_geometry.ff_wavenumbers()
    rng = np.random.default_rng(0)
    true = make_pairs(rng.integers(0, 16, (400, 2)), rng.integers(0, 32, (400, 2)))
    empty = np.zeros(0, dtype=PAIR_DTYPE)
    a = recon.background_corrected_centroids(true, empty, small_geometry)
    b = recon.centroid_map(true, small_geometry)
    assert np.array_equal(a.U, b.U, equal_nan=True) and np.array_equal(a.count, b.count)
    same = recon.background_corrected_centroids(true, true, small_geometry)
    assert not same.valid.any()
    # signal at +gamma mixed with background centred at k = 0
    j_sig, j_bg = 24, 15
    n_s, n_b = 3000, 1000
    sig = make_pairs([[0, 0]] * n_s, [[j_sig, 15]] * n_s)
    bg_lo = make_pairs([[0, 0]] * (n_b // 2), [[j_bg, 15]] * (n_b // 2))
    bg_hi = make_pairs([[0, 0]] * (n_b // 2), [[j_bg + 1, 15]] * (n_b // 2))
    window = np.concatenate([sig, bg_lo, bg_hi])
    shifted = np.concatenate([bg_lo, bg_hi])
    gamma = k[j_sig]
    mixed = recon.centroid_map(window, small_geometry).U[0, 0]
    assert mixed == pytest.approx(gamma * n_s / (n_s + n_b), rel=1e-12)
    assert recon.background_corrected_centroids(window, shifted, small_geometry).U[0, 0] == pytest.approx(gamma)


def test_gradient_from_centroids(small_geometry):
    rng = np.random.default_rng(1)
    pairs = make_pairs(rng.integers(0, 16, (3000, 2)), rng.integers(0, 32, (3000, 2)))
    cm = recon.centroid_map(pairs, small_geometry)
    g = recon.gradient_from_centroids(cm, cm)
    assert np.all(g.p[g.valid] == 0) and np.all(g.q[g.valid] == 0)
    ref = recon.centroid_map(pairs[(pairs["nf_x"] != 3) | (pairs["nf_y"] != 5)], small_geometry)
    g2 = recon.gradient_from_centroids(cm, ref)
    assert not g2.valid[5, 3] and np.isnan(g2.p[5, 3])
    other = recon.CentroidMap(np.zeros((4, 4)), np.zeros((4, 4)), np.ones((4, 4)), 1.0)
    with pytest.raises(GridMismatchError):
        recon.gradient_from_centroids(cm, other)


def _ramp_model(gamma, params, geometry, pixels):
    ramp = optics.gen_target("linear_ramp", (160, 160), 1.1e-6, gradient=(gamma, 0.0))
    return optics.compute_far_field(ramp, params, geometry, pixels=pixels)


def test_linear_response_at_small_gradients(params, small_geometry, small_flat_model):
    K = small_geometry.ff_half_aperture
    k = small_geometry.ff_wavenumbers()
    pix = [8 * 16 + 8]
    u0 = small_flat_model.probs[pix[0]].sum(axis=0) @ k
    gammas = np.array([0.05, 0.1, 0.2, 0.3, 0.4, 0.5]) * K
    p = []
    for g in gammas:
        m = _ramp_model(g, params, small_geometry, pix)
        p.append(m.probs[0].sum(axis=0) @ k - u0)
    slope = np.polyfit(gammas, p, 1)[0]
    assert slope == pytest.approx(1.0, abs=0.03)
    assert np.allclose(np.asarray(p) / gammas, 1.0, atol=0.03)


def test_saturation_beyond_aperture(params, small_geometry):
    K = small_geometry.ff_half_aperture
    k = small_geometry.ff_wavenumbers()
    for g in (1.2 * K, 2.0 * K):
        m = _ramp_model(g, params, small_geometry, [8 * 16 + 8])
        assert m.probs[0].sum(axis=0) @ k < g
    # most of the light misses the aperture
    far = _ramp_model(2.0 * K, params, small_geometry, [8 * 16 + 8])
    near = _ramp_model(0.0, params, small_geometry, [8 * 16 + 8])
    assert far.mass[0] < 0.1 * near.mass[0]


def test_end_to_end_linear_phase(params, small_geometry, small_flat_model, ideal_detector):
    gamma = 5e4
    ramp = optics.gen_target("linear_ramp", (160, 160), 1.1e-6, gradient=(gamma, 0.0))
    model = optics.compute_far_field(ramp, params, small_geometry)
    res = simulate.simulate_pairs(ramp, params, small_geometry, ideal_detector, 1e5, 3, model=model)
    pairs = coincidence.find_coincidences(res.nf, res.ff)
    cm = recon.centroid_map(pairs, small_geometry)
    flat = simulate.simulate_pairs(None, params, small_geometry, ideal_detector, 1e5, 4, model=small_flat_model)
    ref = recon.centroid_map(coincidence.find_coincidences(flat.nf, flat.ff), small_geometry)
    k = small_geometry.ff_wavenumbers()
    spread = math.sqrt(small_flat_model.probs[0].sum(axis=0) @ k**2)
    u = cm.sum_u.sum() / cm.count.sum()
    u0 = ref.sum_u.sum() / ref.count.sum()
    sigma = spread * math.sqrt(1 / cm.count.sum() + 1 / ref.count.sum())
    assert abs(u - u0 - gamma) < 3 * sigma
    g = recon.gradient_from_centroids(cm, ref)
    assert abs(np.nanmean(g.p) - gamma) < 3 * sigma
    assert abs(np.nanmean(g.q)) < 3 * sigma


# --- Frankot-Chellappa -------------------------------------------------------


def _field(p, q, pitch=1.0, valid=None):
    valid = np.ones(p.shape, bool) if valid is None else valid
    return recon.GradientField(p, q, valid, pitch)


def test_fc_zero():
    z = np.zeros((12, 17))
    assert np.all(recon.frankot_chellappa(_field(z, z)).phase == 0)


def test_fc_single_mode_exact():
    ny, nx, pitch = 48, 64, 2e-6
    W = nx * pitch
    x = np.arange(nx) * pitch
    phi = np.tile(np.sin(2 * np.pi * x / W), (ny, 1))
    p = np.tile(2 * np.pi / W * np.cos(2 * np.pi * x / W), (ny, 1))
    out = recon.frankot_chellappa(_field(p, np.zeros_like(p), pitch), mirror=False).phase
    assert np.sqrt(np.mean((out - phi) ** 2)) <= 1e-10
    # the same along y with a higher harmonic
    H = ny * pitch
    y = np.arange(ny) * pitch
    phi = np.tile(np.cos(6 * np.pi * y / H)[:, None], (1, nx))
    q = np.tile((-6 * np.pi / H * np.sin(6 * np.pi * y / H))[:, None], (1, nx))
    out = recon.frankot_chellappa(_field(np.zeros_like(q), q, pitch), mirror=False).phase
    assert np.sqrt(np.mean((out - phi) ** 2)) <= 1e-10


def _bump(n=128, pitch=1.0, width=8.0, height=1.0, centre=(0.0, 0.0)):
    c = (np.arange(n) - (n - 1) / 2) * pitch
    X, Y = np.meshgrid(c, c)
    dx, dy = X - centre[0], Y - centre[1]
    phi = height * np.exp(-(dx**2 + dy**2) / (2 * width**2))
    return phi, -dx / width**2 * phi, -dy / width**2 * phi


def test_fc_gaussian_bump_mirror():
    phi, p, q = _bump(centre=(9.0, -14.0))
    out = recon.frankot_chellappa(_field(p, q)).phase
    ref = phi - phi.mean()
    assert np.sqrt(np.mean((out - ref) ** 2)) <= 1e-3 * phi.max()


def test_fc_mean_zero_and_mask():
    phi, p, q = _bump(64)
    valid = np.ones(p.shape, bool)
    valid[10:14, 30:33] = False
    p[~valid] = np.nan
    out = recon.frankot_chellappa(_field(p, q, valid=valid))
    assert np.all(np.isnan(out.phase[~valid]))
    assert abs(np.nanmean(out.phase)) < 1e-9
    ref = phi - phi[valid].mean()
    assert np.sqrt(np.nanmean((out.phase - ref) ** 2)) < 0.01


def test_fc_degenerate_grid():
    with pytest.raises(InvalidParameterError):
        recon.frankot_chellappa(_field(np.zeros((1, 8)), np.zeros((1, 8))))


def _residual(phi, p, q):
    """Gradient mismatch in the spectral sense used by the integrator (periodic grid)."""
    ny, nx = phi.shape
    u = recon.angular_frequencies(nx, 1.0)[None, :]
    v = recon.angular_frequencies(ny, 1.0)[:, None]
    F = np.fft.fft2(phi)
    gx = np.real(np.fft.ifft2(1j * u * F))
    gy = np.real(np.fft.ifft2(1j * v * F))
    return np.sum((gx - p) ** 2 + (gy - q) ** 2)


def test_fc_is_least_squares():
    rng = np.random.default_rng(5)
    ny, nx = 24, 32
    p = rng.normal(size=(ny, nx))
    q = rng.normal(size=(ny, nx))
    phi = recon.frankot_chellappa(_field(p, q), mirror=False).phase
    base = _residual(phi, p, q)
    y, x = np.mgrid[0:ny, 0:nx]
    for _ in range(20):
        mx, my = rng.integers(0, nx), rng.integers(0, ny)
        if mx == 0 and my == 0:
            continue
        mode = np.cos(2 * np.pi * (mx * x / nx + my * y / ny) + rng.uniform(0, 2 * np.pi))
        for eps in (1e-3, -1e-3):
            assert _residual(phi + eps * mode, p, q) > base


# --- amplitude -----------------------------------------------------------------


def test_amplitude_examples():
    ref = np.full((3, 3), 160.0)
    assert np.all(recon.amplitude_image(ref, ref) == 1.0)
    assert np.allclose(recon.amplitude_image(ref / 16, ref), 0.5)
    assert np.allclose(recon.amplitude_image(ref / 4, ref, "singles"), 0.5)
    assert np.all(recon.amplitude_image(np.zeros((3, 3)), ref) == 0.0)
    z = ref.copy()
    z[1, 1] = 0
    out = recon.amplitude_image(ref, z)
    assert np.isnan(out[1, 1])
    with pytest.raises(InvalidParameterError):
        recon.amplitude_image(ref, ref, "bogus")


def test_amplitude_from_forward_model(params, small_geometry, small_flat_model):
    x = (np.arange(160) - 79.5) * 1.1e-6
    amp = np.where(x[None, :] < 0, 0.5, 1.0) * np.ones((160, 1))
    model = optics.compute_far_field(optics.ComplexTarget(amp, np.zeros_like(amp), 1.1e-6), params, small_geometry)
    # equal exposure: compare unnormalised coincidence weights
    a = recon.amplitude_image(model.mass.reshape(16, 16), small_flat_model.mass.reshape(16, 16))
    assert a[8, 0] == pytest.approx(0.5, rel=0.01)
    assert a[8, 15] == pytest.approx(1.0, rel=0.01)


# --- reference cancellation ----------------------------------------------------


def _flat_cfg(T):
    from qcpgm.config import from_dict

    return from_dict(
        {
            "geometry": {"nf_pixels": 24, "ff_pixels": 32},
            "target": {"kind": "flat", "shape": [160, 160]},
            "detector": {"efficiency_nf": 0.5, "efficiency_ff": 0.5},
            "acquisition": {"pair_rate": 1e5, "acquisition_time": T},
        }
    )


def test_same_seed_reference_cancels_exactly():
    from qcpgm.pipeline import run_pipeline

    cfg = _flat_cfg(0.5)
    cfg.seeds.reference = cfg.seeds.measured
    res = run_pipeline(cfg)
    assert np.nanmax(np.abs(res.phase.phase)) == 0.0
    assert res.report["rmse"] == 0.0


def test_reference_noise_scales_with_counts():
    from qcpgm.pipeline import run_pipeline

    rms = []
    for T in (0.5, 2.0):
        vals = []
        for s in range(3):
            cfg = _flat_cfg(T)
            cfg.seeds.measured, cfg.seeds.reference = 10 + s, 20 + s
            vals.append(np.sqrt(np.nanmean(run_pipeline(cfg).phase.phase ** 2)))
        rms.append(np.mean(vals))
    assert rms[0] / rms[1] == pytest.approx(2.0, rel=0.2)
