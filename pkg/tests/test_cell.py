import numpy as np
import pytest
from scipy.integrate import quad

from reiterhom import cell
from reiterhom import coefficients as co
from reiterhom.fourier import grid1d

# quadrature oracle for the 1-D fixtures: int_0^1 dt/(2+cos 2 pi t) = 3^{-1/2}
HARMONIC_MEAN_2COS = 1.0 / quad(lambda t: 1.0 / (2 + np.cos(2 * np.pi * t)), 0, 1)[0]


def test_oracle_quadrature_value():
    assert np.isclose(HARMONIC_MEAN_2COS, np.sqrt(3.0), atol=1e-10)


@pytest.fixture(scope="module")
def product_spec():
    return co.builtin_family("trig_product", [2, 1, 2, 1])


@pytest.fixture(scope="module")
def product_set(product_spec):
    return cell.build_corrector_set(product_spec, 64, 64)


@pytest.fixture(scope="module")
def laminate_set():
    spec = co.builtin_family("laminate_x1", [2, 1, 2, 1])
    return spec, cell.build_corrector_set(spec, 16, 32)


def test_identity_inner_corrector_vanishes():
    spec = co.builtin_family("constant", [1.0], dim=2)
    fields, res = cell.solve_inner_cell(spec, [0.1, 0.7], 16)
    assert max(np.abs(f.values).max() for f in fields) == 0.0
    assert res.max() == 0.0


def test_identity_pipeline():
    spec = co.builtin_family("constant", [1.0], dim=2)
    cs = cell.build_corrector_set(spec, 8, 16)
    assert np.allclose(cs.a_hat, np.eye(2), atol=1e-14)
    assert np.abs(cs.outer).max() == 0.0
    assert np.allclose(cs.b_field, np.eye(2), atol=1e-14)


def test_inner_1d_closed_form(product_spec):
    # a(y,z) = (2+cos 2pi y)(2+cos 2pi z): dz chi = 1 - sqrt(3)/(2+cos 2pi z)
    fields, res = cell.solve_inner_cell(product_spec, [0.3], 64)
    z = grid1d(64)
    exact = 1.0 - HARMONIC_MEAN_2COS / (2 + np.cos(2 * np.pi * z))
    got = fields[0].derivative(0).values
    assert np.abs(got - exact).max() < 1e-11
    assert res.max() < 1e-12


def test_average_inner_1d(product_spec):
    y = 0.3
    fields, _ = cell.solve_inner_cell(product_spec, [y], 64)
    b = cell.average_inner(product_spec, fields, [y])
    expect = HARMONIC_MEAN_2COS * (2 + np.cos(2 * np.pi * y))
    assert np.isclose(b[0, 0], expect, atol=1e-11)


def test_outer_1d_closed_form(product_set):
    # b(y) = sqrt(3)(2+cos 2pi y) gives dy chi = 1 - sqrt(3)/(2+cos 2pi y)
    douter = product_set.outer_gradient()[0, 0]
    y = grid1d(64)
    exact = 1.0 - HARMONIC_MEAN_2COS / (2 + np.cos(2 * np.pi * y))
    assert np.abs(douter - exact).max() < 1e-10


def test_homogenized_tensor_1d(product_set):
    assert np.isclose(product_set.a_hat[0, 0], 3.0, atol=1e-10)


def test_mean_zero_side_conditions(product_set):
    inner_means = product_set.inner_flat().mean(axis=-1)
    assert np.abs(inner_means).max() < 1e-15
    assert abs(product_set.outer.mean()) < 1e-15


def test_laminate_structure(laminate_set):
    spec, cs = laminate_set
    # transverse corrector vanishes; chi_y^1 depends on z1 only
    fields, _ = cell.solve_inner_cell(spec, [0.3, 0.9], 32)
    assert np.abs(fields[1].values).max() < 1e-13
    v = fields[0].values
    assert np.abs(v - v[:, :1]).max() < 1e-13
    # outer transverse corrector vanishes
    assert np.abs(cs.outer[1]).max() < 1e-12


def test_laminate_inner_matches_1d_slice(laminate_set):
    # oracle: the 1-D solver applied to the z1 slice coefficient c*(2 + cos 2 pi z1)
    spec, _ = laminate_set
    y = [0.3, 0.9]
    fields2d, _ = cell.solve_inner_cell(spec, y, 32)
    c = float(2 + np.cos(2 * np.pi * 0.3))
    spec1d = co.parse_coefficient(f"a11 = {2 * c!r} + {c!r}*cos(2*pi*z1)")
    fields1d, _ = cell.solve_inner_cell(spec1d, [0.0], 32)
    assert np.abs(fields2d[0].values[:, 0] - fields1d[0].values).max() < 1e-11


def test_laminate_b_transverse_is_arithmetic_mean(laminate_set):
    spec, cs = laminate_set
    y_pts = cs.y_points()
    b22 = cs.b_field.reshape(-1, 2, 2)[:, 1, 1]
    expect = (2 + np.cos(2 * np.pi * y_pts[:, 0])) * 2.0  # z-mean of (2+cos 2pi z1) is 2
    assert np.abs(b22 - expect).max() < 1e-12


def test_laminate_a_hat_iterated_means(laminate_set):
    _, cs = laminate_set
    # 11: harmonic in z then harmonic in y; 22: arithmetic twice
    assert np.isclose(cs.a_hat[0, 0], 3.0, atol=1e-9)
    assert np.isclose(cs.a_hat[1, 1], 4.0, atol=1e-9)
    assert abs(cs.a_hat[0, 1]) < 1e-12 and abs(cs.a_hat[1, 0]) < 1e-12


def test_discrete_flux_conservation(product_spec):
    # a dz(chi - z) has constant zeroth mode in 1-D: spectral residual of the solve
    fields, _ = cell.solve_inner_cell(product_spec, [0.4], 64)
    z = grid1d(64)
    a = product_spec.eval_entry(0, 0, np.full((64, 1), 0.4), z[:, None])
    flux = a * (fields[0].derivative(0).values - 1.0)
    assert np.std(flux) / np.abs(flux).mean() < 1e-11


def test_flux_divergence_free_2d():
    spec = co.builtin_family("trig_general", [1.0])
    fields, _ = cell.solve_inner_cell(spec, [0.15, 0.45], 32)
    a = spec.eval_y_tensor_z(np.array([[0.15, 0.45]]), 32)[0]
    for k in range(2):
        grad = fields[k].gradient().values
        grad[k] -= 1.0
        flux = np.einsum("ij...,j...->i...", a, grad)
        div = cell._divergence_batch(flux[None], 2)[0]
        assert np.abs(div).max() < 1e-9


def test_self_convergence_of_a_hat():
    spec = co.builtin_family("trig_general", [1.0])
    a1 = cell.build_corrector_set(spec, 8, 16).a_hat
    a2 = cell.build_corrector_set(spec, 16, 32).a_hat
    a3 = cell.build_corrector_set(spec, 32, 64).a_hat
    d12 = np.abs(a1 - a2).max()
    d23 = np.abs(a2 - a3).max()
    assert d23 < 1e-8
    assert d23 < d12


def test_transposition_duality():
    text = ("a11 = 3 + cos(2*pi*y1)*cos(2*pi*z1); a22 = 3 + sin(2*pi*z2);"
            "a12 = 0.4*sin(2*pi*y1); a21 = 0.2*cos(2*pi*z1)")
    spec = co.parse_coefficient(text)
    assert not spec.is_symmetric()
    ah = cell.build_corrector_set(spec, 16, 16).a_hat
    ah_star = cell.build_corrector_set(spec.transpose(), 16, 16).a_hat
    assert np.allclose(ah_star, ah.T, atol=1e-9)


def test_inner_y_periodicity_wraparound(product_spec):
    # tabulated values at y-index 0 equal the trig interpolant at y = 1
    inner, _, _ = cell.tabulate_inner(product_spec, 8, 32)
    y_wrap = cell.solve_inner_cell(product_spec, [1.0], 32)[0][0].values
    assert np.abs(inner[0, 0] - y_wrap).max() < 1e-12


def test_corrector_diagnostics_zero_for_identity():
    spec = co.builtin_family("constant", [1.0], dim=2)
    cs = cell.build_corrector_set(spec, 8, 16)
    report = cell.corrector_diagnostics(spec, cs)
    for key, val in report.items():
        assert val == 0.0, key


def test_corrector_diagnostics_stable_under_refinement():
    # trig_general has genuine y-dependence in the inner corrector
    spec = co.builtin_family("trig_general", [1.0])
    coarse = cell.corrector_diagnostics(spec, cell.build_corrector_set(spec, 8, 16))
    fine = cell.corrector_diagnostics(spec, cell.build_corrector_set(spec, 16, 32))
    for key in ("inner_grad_l2_max", "inner_dy_energy_max", "inner_dydz_energy_max",
                "outer_w2p2"):
        assert fine[key] > 0
        assert abs(fine[key] - coarse[key]) / fine[key] < 0.01, key


def test_diagnostics_grow_with_amplitude_but_stay_bounded():
    vals = []
    for amp in (0.5, 1.0, 1.4):
        spec = co.builtin_family("trig_general", [amp])
        cs = cell.build_corrector_set(spec, 8, 16)
        vals.append(cell.corrector_diagnostics(spec, cs)["inner_dy_energy_max"])
    assert vals[0] < vals[1] < vals[2]
    certs = [co.validate_conditions(co.builtin_family("trig_general", [amp]), 8)
             for amp in (0.5, 1.0, 1.4)]
    fitted = [v / c.m_lip for v, c in zip(vals, certs)]
    assert max(fitted) < 10 * min(fitted)


def test_resolution_preconditions():
    spec = co.parse_coefficient("a11 = 2 + cos(2*pi*8*z1)")
    with pytest.raises(ValueError):
        cell.solve_inner_cell(spec, [0.0], 16)
    with pytest.raises(ValueError):
        cell.solve_inner_cell(spec, [0.0], 48)


def test_ellipticity_precheck_blocks_solve():
    spec = co.parse_coefficient("a11 = 0.05 + cos(2*pi*z1)")
    with pytest.raises(co.EllipticityViolation):
        cell.solve_inner_cell(spec, [0.0], 32)


def test_cache_roundtrip(tmp_path, product_set):
    path = tmp_path / "cache.npz"
    cell.save_corrector_set(product_set, path)
    back = cell.load_corrector_set(path)
    assert back.n_y == product_set.n_y
    assert np.array_equal(back.inner, product_set.inner)
    assert np.array_equal(back.a_hat, product_set.a_hat)
    assert back.spec_digest == product_set.spec_digest


def test_csv_export(tmp_path):
    spec = co.builtin_family("trig_product", [2, 1, 2, 1])
    cs = cell.build_corrector_set(spec, 4, 8)
    path = tmp_path / "correctors.csv"
    cell.export_corrector_csv(cs, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "y_index,k,mode1,re,im"
    assert len(lines) == 1 + 4 * 1 * 8
