import numpy as np
import pytest

from kspacenet.errors import InvalidArgument
from kspacenet.phantom import (CoilImages, Ellipse, GammaVariate, ImageGrid, KSpaceStack, Scene,
                               apply_sensitivities, enhancement_scene, fft2c, forward_kspace,
                               ifft2c, inverse_kspace, make_coil_sensitivities,
                               make_dynamic_phantom, point_source_image)
from kspacenet.metrics import ssos

G64 = ImageGrid(64, 64)


def test_grid_rejects_odd():
    with pytest.raises(InvalidArgument):
        ImageGrid(63, 64)


def test_kcoords_range():
    ky, kx = ImageGrid(8, 6).kcoords()
    assert kx.min() == -0.5 and kx.max() < 0.5
    assert ky[3, 0] == 0 and kx[0, 4] == 0


def test_vessel_background_only_before_onset():
    scene = Scene([Ellipse(0, 0, 0.9, 0.9, 1.0, name="background"),
                   Ellipse(0.2, 0.1, 0.1, 0.1, 0.0, name="vessel",
                           enhancement=GammaVariate(2.0, onset=2, rise=3))], num_frames=10)
    ph = make_dynamic_phantom(G64, scene, seed=0)
    vessel = ph.region_masks["vessel"]
    np.testing.assert_array_equal(ph.frames[0][vessel], 1.0)


def test_phantom_deterministic():
    a = make_dynamic_phantom(G64, enhancement_scene(jitter=0.02), seed=3)
    b = make_dynamic_phantom(G64, enhancement_scene(jitter=0.02), seed=3)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa, fb)


def test_vessel_mean_peaks_at_closed_form_frame():
    scene = enhancement_scene(num_frames=10, onset=2, rise=3)
    ph = make_dynamic_phantom(G64, scene, seed=0)
    vessel = ph.region_masks["vessel"]
    means = np.array([f[vessel].mean() for f in ph.frames])
    # closed-form peak at onset + rise
    assert np.argmax(means) == 5
    assert np.sum(means == means.max()) == 1


def test_gamma_variate_closed_form():
    g = GammaVariate(2.0, onset=2, rise=3, decay=2)
    assert g(2) == 0 and g(0) == 0
    assert g(5) == pytest.approx(2.0)
    tau = 2 / 3
    assert g(4) == pytest.approx(2.0 * tau**2 * np.exp(2 * (1 - tau)))


def test_phantom_nonnegative_and_varies():
    ph = make_dynamic_phantom(G64, enhancement_scene(), seed=0)
    assert all(f.min() >= 0 for f in ph.frames)
    assert not np.array_equal(ph.frames[0], ph.frames[5])


def test_zero_frames_rejected():
    with pytest.raises(InvalidArgument):
        make_dynamic_phantom(G64, enhancement_scene(num_frames=0), seed=0)


def test_single_coil_unit_modulus():
    s = make_coil_sensitivities(G64, 1, 5, seed=0)
    np.testing.assert_allclose(np.abs(s.maps[0]), 1.0, atol=1e-14)


@pytest.mark.parametrize("p", [2, 3, 4, 8])
def test_sensitivity_support_and_ssos(p):
    s = make_coil_sensitivities(G64, p, 5, seed=1)
    k = fft2c(s.maps)
    outside = np.ones((64, 64), bool)
    outside[30:35, 30:35] = False
    assert np.abs(k[:, outside]).max() == 0 or np.abs(k[:, outside]).max() < 1e-13 * np.abs(k).max()
    assert np.count_nonzero(np.abs(k[:, ~outside]) > 1e-13) <= 25 * p
    assert np.abs(ssos(s.maps) - 1).max() <= 1e-12


def test_sensitivity_exact_support_four_coils():
    s = make_coil_sensitivities(G64, 4, 5, seed=1)
    k = fft2c(s.maps)
    for c in range(4):
        nz = np.argwhere(np.abs(k[c]) > 1e-12)
        assert np.all(np.abs(nz - 32) <= 2)


def test_even_support_rejected():
    with pytest.raises(InvalidArgument):
        make_coil_sensitivities(G64, 4, 4, seed=0)
    with pytest.raises(InvalidArgument):
        make_coil_sensitivities(G64, 4, 17, seed=0)


def test_sensitivity_seeded():
    a = make_coil_sensitivities(G64, 4, 5, seed=2).maps
    b = make_coil_sensitivities(G64, 4, 5, seed=2).maps
    c = make_coil_sensitivities(G64, 4, 5, seed=3).maps
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_apply_sensitivities_identity_and_zero():
    s = make_coil_sensitivities(G64, 1, 3, seed=0)
    s.maps[:] = 1.0
    x = np.random.default_rng(0).random((64, 64))
    np.testing.assert_array_equal(apply_sensitivities(x, s).images[0], x)
    s4 = make_coil_sensitivities(G64, 4, 5, seed=0)
    assert not np.any(apply_sensitivities(np.zeros((64, 64)), s4).images)


def test_coil_ssos_equals_magnitude():
    s = make_coil_sensitivities(G64, 4, 5, seed=0)
    x = np.random.default_rng(1).standard_normal((64, 64))
    g = apply_sensitivities(x, s)
    assert np.abs(ssos(g) - np.abs(x)).max() <= 1e-12


def test_apply_sensitivities_grid_mismatch():
    s = make_coil_sensitivities(G64, 2, 5, seed=0)
    with pytest.raises(InvalidArgument):
        apply_sensitivities(np.zeros((32, 32)), s)


def test_constant_image_kspace():
    c = 2.5
    k = fft2c(np.full((1, 16, 8), c))
    assert k[0, 8, 4] == pytest.approx(c * np.sqrt(16 * 8))
    k[0, 8, 4] = 0
    assert np.abs(k).max() < 1e-12


def test_round_trip_and_parseval():
    rng = np.random.default_rng(0)
    g = CoilImages(rng.standard_normal((3, 32, 16)) + 1j * rng.standard_normal((3, 32, 16)))
    ks = forward_kspace(g, frame_index=4)
    assert ks.frame_index == 4
    back = inverse_kspace(ks).images
    assert np.linalg.norm(back - g.images) <= 1e-12 * np.linalg.norm(g.images)
    assert abs(np.linalg.norm(ks.data) - np.linalg.norm(g.images)) <= 1e-12 * np.linalg.norm(g.images)


def test_fft_matches_direct_dft():
    # independent oracle: explicit centered DFT matrix
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))

    def dft(n):
        k = np.arange(n) - n // 2
        return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)

    np.testing.assert_allclose(fft2c(x), dft(6) @ x @ dft(4).T, atol=1e-12)
    np.testing.assert_allclose(ifft2c(fft2c(x)), x, atol=1e-12)


def test_kspace_rejects_nonfinite():
    with pytest.raises(InvalidArgument):
        KSpaceStack(np.full((1, 4, 4), np.nan))


def _support_conv(a, kern, h):
    # periodic convolution with a kernel supported on the central (2h+1)^2 block
    ny, nx = a.shape
    out = np.zeros_like(a)
    for dy in range(-h, h + 1):
        for dx in range(-h, h + 1):
            out += kern[ny // 2 + dy, nx // 2 + dx] * np.roll(a, (dy, dx), axis=(0, 1))
    return out


def test_inter_coil_annihilation():
    ph = make_dynamic_phantom(G64, enhancement_scene(), seed=0)
    s = make_coil_sensitivities(G64, 4, 5, seed=0)
    g = forward_kspace(apply_sensitivities(ph.frames[5], s)).data
    sk = fft2c(s.maps) / 64  # unitary scaling folded in
    gmax = np.abs(g).max()
    for i in range(4):
        for j in range(i + 1, 4):
            r = _support_conv(g[i], sk[j], 2) - _support_conv(g[j], sk[i], 2)
            assert np.abs(r).max() <= 1e-10 * gmax


def test_point_source_image():
    x = point_source_image(ImageGrid(32, 32), 3, seed=0)
    assert np.count_nonzero(x) == 3
