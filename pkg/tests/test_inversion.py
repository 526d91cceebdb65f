import warnings

import numpy as np
import pytest
from sklearn.base import clone

from rkhscatter.exceptions import (ExtrapolationWarning, InvalidArgumentError,
                                   MetricUndefinedError)
from rkhscatter.forward import ScatteringData, born_amplitude, forward_matrix
from rkhscatter.inversion import (RKHSReconstructor, ReconstructedField, assemble_slices,
                                  baseline_linear_inversion, chi_squared,
                                  chi_squared_amplitudes, delta_error, hull_mask,
                                  lattice_indices, predict_amplitudes, reconstruct,
                                  reconstruct_fd_oracle)
from rkhscatter.scene import (DetectorSet, SourceSet, SusceptibilityField, centered_subgrid,
                              gaussian_bump, l_shape_detectors, layer_heights, make_grid,
                              place_sources_lattice, place_sources_random, three_ball_layer,
                              zero_field)

K = 2 * np.pi / 500


@pytest.fixture(scope="module")
def layer_setup():
    fg = make_grid(2, (17, 17), 70 / 17)
    rg = centered_subgrid(fg, (15, 15))
    truth = three_ball_layer(fg, layer_heights(17)[7])
    src = place_sources_random(fg, 60, 0)
    det = l_shape_detectors(2, 7)
    data = born_amplitude(truth, src, det, K)
    return fg, rg, truth, data


def test_zero_phantom_reconstructs_zero(layer_setup):
    fg, rg, _, data = layer_setup
    zero = born_amplitude(zero_field(fg), data.sources, data.detectors, K)
    rec = RKHSReconstructor(K).fit_data(zero).reconstruct(rg, warn=False)
    assert np.max(np.abs(rec.values_complex)) <= 1e-6


def test_single_and_all_detectors_pinned(layer_setup):
    _, rg, truth, data = layer_setup
    deltas = {}
    for blocks in ("single", "all"):
        est = RKHSReconstructor(K, blocks=blocks).fit_data(data)
        deltas[blocks] = delta_error(truth, est.reconstruct(rg, warn=False))
    assert deltas["single"] == pytest.approx(0.31107731052534454, rel=1e-6)
    assert deltas["all"] == pytest.approx(0.3119375096718582, rel=1e-6)
    assert abs(deltas["single"] - deltas["all"]) < 0.05 * deltas["all"]


def test_single_block_average_is_identity(layer_setup):
    _, rg, _, data = layer_setup
    rec = RKHSReconstructor(K).fit_data(data).reconstruct(rg, warn=False)
    assert rec.per_detector.shape[0] == 1
    np.testing.assert_array_equal(rec.per_detector[0], rec.values_complex)


def test_block_selection(layer_setup):
    _, rg, _, data = layer_setup
    est = RKHSReconstructor(K, blocks=[0, 3]).fit_data(data)
    rec = est.reconstruct(rg, warn=False)
    np.testing.assert_allclose(rec.values_complex, rec.per_detector.mean(axis=0), rtol=1e-15)
    assert rec.per_detector.shape[0] == 2


def test_global_phase(layer_setup):
    _, rg, _, data = layer_setup
    theta = 0.7
    rotated = ScatteringData(data.amplitudes * np.exp(1j * theta), data.sources,
                             data.detectors, K, data.domain)
    a = RKHSReconstructor(K).fit_data(data).reconstruct(rg, warn=False).values_complex
    b = RKHSReconstructor(K).fit_data(rotated).reconstruct(rg, warn=False).values_complex
    scale = np.abs(a).max()
    assert np.max(np.abs(b - a * np.exp(1j * theta))) <= 1e-10 * scale
    assert np.max(np.abs(np.abs(b) - np.abs(a))) <= 1e-10 * scale


def test_bit_identical_reruns(layer_setup):
    _, rg, _, data = layer_setup
    a = RKHSReconstructor(K).fit_data(data).reconstruct(rg, warn=False)
    b = RKHSReconstructor(K).fit_data(data).reconstruct(rg, warn=False)
    assert a.values_complex.tobytes() == b.values_complex.tobytes()


def test_mirror_symmetry():
    n, h = 17, 70 / 17
    fg = make_grid(2, (n, n), h, origin=(-35.0, 0.0))
    rg = centered_subgrid(fg, (15, 15))
    truth = three_ball_layer(fg, 15.0)
    mirrored = SusceptibilityField(fg, np.flip(truth.values, axis=0))
    src = place_sources_random(fg, 60, 4)
    msrc = SourceSet(src.positions * [-1.0, 1.0])
    det = l_shape_detectors(2, 7)
    mdet = DetectorSet(det.directions * [-1.0, 1.0])
    a = RKHSReconstructor(K).fit_data(born_amplitude(truth, src, det, K))
    b = RKHSReconstructor(K).fit_data(born_amplitude(mirrored, msrc, mdet, K))
    ra = a.reconstruct(rg, warn=False).values
    rb = b.reconstruct(rg, warn=False).values
    assert np.max(np.abs(rb - np.flip(ra, axis=0))) <= 1e-10 * np.max(np.abs(ra))


def test_reconstruct_dimension_checks(layer_setup):
    _, _, _, data = layer_setup
    est = RKHSReconstructor(K).fit_data(data)
    with pytest.raises(InvalidArgumentError):
        reconstruct(est.model_, make_grid(3, (3, 3, 3), 1.0), data.detectors, K)


def test_extrapolation_warning(layer_setup):
    fg, _, _, data = layer_setup
    est = RKHSReconstructor(K).fit_data(data)
    with pytest.warns(ExtrapolationWarning):
        rec = est.reconstruct(fg)
    corner = fg.flat_index([[0.1, 0.1]])[0]
    assert not rec.inside_hull[corner]


def test_hull_mask_degenerate():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    assert not hull_mask(pts, np.array([[1.0, 1.0]])).any()


def test_estimator_api(layer_setup):
    fg, rg, _, data = layer_setup
    est = RKHSReconstructor(K, alpha=1e-9, blocks="all")
    assert clone(est).get_params() == est.get_params()
    est.set_params(alpha=None)
    est.fit(data.design(), data.target(), domain=fg)
    rec = est.reconstruct(rg, warn=False)
    np.testing.assert_allclose(est.predict(rg.centers()), rec.values.ravel(), rtol=1e-12,
                               atol=1e-12 * np.abs(rec.values).max())
    with pytest.raises(InvalidArgumentError):
        RKHSReconstructor(K, alpha="bogus").fit_data(data)
    with pytest.raises(Exception):
        RKHSReconstructor(K).predict(rg.centers())


def test_lambda_rules_in_reconstructor(layer_setup):
    _, _, _, data = layer_setup
    gcv = RKHSReconstructor(K, alpha="gcv").fit_data(data).model_.lam
    disc = RKHSReconstructor(K, alpha="discrepancy", noise_level=0.01).fit_data(data).model_.lam
    default = RKHSReconstructor(K, alpha="discrepancy").fit_data(data).model_.lam
    tr = np.trace(RKHSReconstructor(K).fit_data(data).model_.gram) / data.n
    assert default == pytest.approx(1e-8 * tr)
    for lam in (gcv, disc):
        assert np.isclose(np.log10(lam / tr), np.round(np.log10(lam / tr)))


def _bump_lattice(n_side, step_cells, nf=105, width=8.0):
    h = 70.0 / nf
    fg = make_grid(2, (nf, nf), h)
    bump = gaussian_bump(fg, width)
    c0 = (nf - 1) // 2
    idx = c0 + step_cells * (np.arange(n_side) - (n_side - 1) // 2)
    xs = (idx + 0.5) * h
    src = SourceSet(np.array([(a, b) for a in xs for b in xs]))
    return bump, born_amplitude(bump, src, l_shape_detectors(2, 7), K)


def test_fd_oracle_zero_and_shape():
    g = make_grid(2, (9, 9), 1.0)
    src = place_sources_lattice(g, (5, 5))
    data = born_amplitude(zero_field(g), src, l_shape_detectors(2, 3), 0.05)
    rec = reconstruct_fd_oracle(data)
    assert rec.grid.shape == (3, 3)
    assert not np.any(rec.values_complex)


def test_fd_oracle_second_order():
    errs = []
    for n, m in ((13, 8), (25, 4)):
        bump, data = _bump_lattice(n, m)
        rec = reconstruct_fd_oracle(data)
        tr = bump.sample(rec.grid.centers())
        errs.append(np.linalg.norm(rec.values.ravel() - tr) / np.linalg.norm(tr))
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_fd_oracle_needs_lattice(layer_setup):
    _, _, _, data = layer_setup
    with pytest.raises(InvalidArgumentError):
        reconstruct_fd_oracle(data)
    with pytest.raises(InvalidArgumentError):
        lattice_indices(np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]))


def test_assemble_slices(layer_setup):
    _, rg, _, data = layer_setup
    rec = RKHSReconstructor(K).fit_data(data).reconstruct(rg, warn=False)
    one = assemble_slices([rec])
    assert one.grid.shape == (15, 15, 1)
    g31 = make_grid(2, (31, 31), 2.0)
    layers = [ReconstructedField(g31, np.full(961, float(i))) for i in range(17)]
    vol = assemble_slices(layers, layer_heights(17))
    assert vol.grid.shape == (31, 31, 17)
    np.testing.assert_array_equal(vol.values[3, 4, :], np.arange(17.0))
    with pytest.raises(InvalidArgumentError):
        assemble_slices([layers[0], rec])
    with pytest.raises(InvalidArgumentError):
        assemble_slices([])


def test_symmetric_layers_bit_identical():
    fg = make_grid(2, (17, 17), 70 / 17)
    rg = centered_subgrid(fg, (15, 15))
    z = layer_heights(20)
    src = place_sources_random(fg, 40, 2)
    det = l_shape_detectors(2, 7)
    out = []
    for zz in (z[6], z[8]):
        data = born_amplitude(three_ball_layer(fg, zz), src, det, K)
        out.append(RKHSReconstructor(K).fit_data(data).reconstruct(rg, warn=False))
    assert out[0].values_complex.tobytes() == out[1].values_complex.tobytes()


def test_baseline_recovers_consistent_data():
    g = make_grid(2, (4, 4), 4.0)
    rng = np.random.default_rng(3)
    eta = SusceptibilityField(g, rng.uniform(0.5, 1.5, 16))
    data = born_amplitude(eta, place_sources_random(g, 40, 1), l_shape_detectors(2, 7), K)
    rec = baseline_linear_inversion(data, g)
    assert np.linalg.norm(rec.values.ravel() - eta.flat) <= 1e-6 * np.linalg.norm(eta.flat)
    refit = predict_amplitudes(rec, data)
    assert chi_squared_amplitudes(data.amplitudes, refit) <= 1e-12


def test_baseline_rcond_one_gives_zero():
    g = make_grid(2, (4, 4), 4.0)
    data = born_amplitude(gaussian_bump(g, 4.0), place_sources_random(g, 40, 1),
                          l_shape_detectors(2, 7), K)
    assert not np.any(baseline_linear_inversion(data, g, rcond=1.0).values)


def test_baseline_underdetermined():
    g = make_grid(2, (8, 8), 2.0)
    data = born_amplitude(gaussian_bump(g, 4.0), place_sources_random(g, 3, 1),
                          l_shape_detectors(2, 3), K)
    with pytest.raises(InvalidArgumentError):
        baseline_linear_inversion(data, g)


def test_predict_amplitudes_uses_born_map(layer_setup):
    fg, _, truth, data = layer_setup
    rec = ReconstructedField(fg, truth.flat)
    np.testing.assert_allclose(predict_amplitudes(rec, data), data.amplitudes, rtol=1e-12)
    m = forward_matrix(fg, data.sources, data.detectors, K)
    np.testing.assert_allclose(m @ truth.flat, data.target(), rtol=1e-12)


def test_chi_squared_limits():
    a = np.array([1.0 + 1j, 2.0, -0.5j])
    assert chi_squared_amplitudes(a, a) == 0.0
    assert chi_squared_amplitudes(a, np.zeros(3)) == 1.0
    with pytest.raises(MetricUndefinedError):
        chi_squared_amplitudes(np.zeros(3), np.zeros(3))


def test_chi_squared_of_interpolating_fit():
    g = make_grid(2, (12, 12), 5.0)
    xs = (np.arange(4) + 0.5) * 15.0
    src = SourceSet(np.array([(a, b) for a in xs for b in xs]))
    data = born_amplitude(gaussian_bump(g, 12.0), src, l_shape_detectors(2, 2), K)
    est = RKHSReconstructor(K, alpha=0.0).fit_data(data)
    assert chi_squared(data, est.model_) <= 1e-12


def test_delta_error(layer_setup):
    fg, rg, truth, _ = layer_setup
    exact = ReconstructedField(rg, truth.sample(rg.centers()))
    assert delta_error(truth, exact) == 0.0
    shifted = ReconstructedField(rg, truth.sample(rg.centers()) + 0.1)
    assert delta_error(truth, shifted) == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(InvalidArgumentError):
        delta_error(truth, ReconstructedField(make_grid(2, (3, 3), 100.0), np.zeros(9)))


def test_no_warning_inside_hull(layer_setup):
    fg, _, _, data = layer_setup
    est = RKHSReconstructor(K).fit_data(data)
    tiny = centered_subgrid(fg, (3, 3))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        est.reconstruct(tiny)
