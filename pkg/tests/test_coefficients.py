import numpy as np
import pytest

from reiterhom import coefficients as co


def test_parse_cross_term():
    spec = co.parse_coefficient("a11 = 2 + cos(2*pi*y1)*cos(2*pi*z1)")
    assert spec.dim == 1
    assert len(spec.entries[0][0]) == 2
    assert np.isclose(spec.evaluate([0.0], [0.0])[0, 0], 3.0)


def test_parse_identity_listing():
    spec = co.parse_coefficient("a11 = 1; a12 = 0; a21 = 0; a22 = 1")
    assert spec.dim == 2
    assert np.allclose(spec.evaluate([0.3, 0.7], [0.1, 0.9]), np.eye(2))


def test_half_integer_frequency_rejected():
    with pytest.raises(co.FrequencyError):
        co.parse_coefficient("a11 = cos(pi*y1)")


def test_missing_pi_rejected():
    with pytest.raises(co.FrequencyError):
        co.parse_coefficient("a11 = cos(2*y1)")


def test_syntax_error_carries_location():
    with pytest.raises(co.DslError) as err:
        co.parse_coefficient("a11 = 1\na22 = 2 + * 3")
    assert err.value.line == 2
    assert err.value.col > 0


def test_dimension_mismatch():
    with pytest.raises(co.DimensionError):
        co.parse_coefficient("a11 = cos(2*pi*y2)", dim=1)


def test_eval_examples_from_grammar():
    spec = co.parse_coefficient("a11 = 2 + cos(2*pi*y1)*cos(2*pi*z1)")
    assert np.isclose(spec.eval_entry(0, 0, [0.0], [0.0]), 3.0)
    # cos(pi/2) = 0 kills the cross term at y1 = 1/4 regardless of z
    for z in (0.0, 0.3, 0.77):
        assert np.isclose(spec.eval_entry(0, 0, [0.25], [z]), 2.0, atol=1e-15)


def test_periodicity_under_unit_shifts():
    spec = co.builtin_family("trig_general", [1.2])
    rng = np.random.default_rng(7)
    for _ in range(25):
        y = rng.uniform(0, 1, 2)
        z = rng.uniform(0, 1, 2)
        base = spec.evaluate(y, z)
        for k in range(2):
            ey = np.zeros(2)
            ey[k] = 1.0
            assert np.allclose(spec.evaluate(y + ey, z), base, atol=1e-12)
            assert np.allclose(spec.evaluate(y, z + ey), base, atol=1e-12)


def test_roundtrip_print_parse():
    rng = np.random.default_rng(11)
    for fam, params in [("trig_product", [2, 1, 2, 1]),
                        ("trig_general", [0.8]),
                        ("laminate_x1", [3, 0.5, 2, 1])]:
        spec = co.builtin_family(fam, params)
        back = co.parse_coefficient(co.format_coefficient(spec), dim=spec.dim)
        for _ in range(10):
            y = rng.uniform(0, 1, spec.dim)
            z = rng.uniform(0, 1, spec.dim)
            assert np.allclose(back.evaluate(y, z), spec.evaluate(y, z), atol=1e-13)


def test_eval_y_tensor_z_matches_pointwise():
    spec = co.builtin_family("trig_general", [1.0])
    ypts = np.array([[0.1, 0.6], [0.35, 0.0]])
    tensor = spec.eval_y_tensor_z(ypts, 8)
    t = np.arange(8) / 8
    for b, y in enumerate(ypts):
        for i1, z1 in enumerate(t):
            for i2, z2 in enumerate(t):
                assert np.allclose(tensor[b, :, :, i1, i2],
                                   spec.evaluate(y, [z1, z2]), atol=1e-13)


def test_validate_identity():
    spec = co.builtin_family("constant", [1.0], dim=2)
    cert = co.validate_conditions(spec, 8)
    assert np.isclose(cert.alpha, 1.0) and np.isclose(cert.beta, 1.0)
    assert cert.m_lip == 0.0


def test_validate_product_extremes():
    # extrema (2-1)(2-1) = 1 and (2+1)(2+1) = 9; dense-sampling oracle below
    spec = co.builtin_family("trig_product", [2, 1, 2, 1])
    cert = co.validate_conditions(spec, 32)
    assert np.isclose(cert.alpha, 1.0, atol=1e-12)
    assert np.isclose(cert.beta, 9.0, atol=1e-12)
    ys = np.linspace(0, 1, 301)
    vals = np.array([[spec.eval_entry(0, 0, [y], [z]) for z in ys] for y in ys])
    assert cert.alpha <= vals.min() + 1e-12
    assert cert.beta >= vals.max() - 1e-12


def test_validate_bracket_tightens_with_resolution():
    spec = co.builtin_family("trig_product", [2, 1, 2, 1], dim=1)
    coarse = co.validate_conditions(spec, 8)
    fine = co.validate_conditions(spec, 64)
    # sampled bounds only tighten inward and the slack shrinks
    assert coarse.alpha >= 1.0 - 1e-12
    assert fine.alpha >= 1.0 - 1e-12
    assert fine.beta <= 9.0 + 1e-12
    assert fine.slack < coarse.slack


def test_validate_rejects_indefinite():
    spec = co.parse_coefficient("a11 = cos(2*pi*y1)")
    with pytest.raises(co.EllipticityViolation):
        co.validate_conditions(spec, 16)


def test_validate_resolution_precondition():
    spec = co.parse_coefficient("a11 = 2 + cos(2*pi*4*z1)")
    with pytest.raises(ValueError):
        co.validate_conditions(spec, 8)


def test_builtin_constant_forms():
    ident = co.builtin_family("constant", [[1, 0], [0, 1]])
    assert np.allclose(ident.evaluate([0.2, 0.4], [0.6, 0.8]), np.eye(2))
    scaled = co.builtin_family("constant", [2.5], dim=1)
    assert np.isclose(scaled.evaluate([0.5], [0.5])[0, 0], 2.5)


def test_builtin_trig_product_values():
    spec = co.builtin_family("trig_product", [2, 1, 2, 1])
    y, z = 0.13, 0.57
    expect = (2 + np.cos(2 * np.pi * y)) * (2 + np.cos(2 * np.pi * z))
    assert np.isclose(spec.evaluate([y], [z])[0, 0], expect)


def test_builtin_laminate_transverse_derivatives_vanish():
    spec = co.builtin_family("laminate_x1", [2, 1, 2, 1])
    assert spec.y_derivative_entry(0, 0, 1) == ()
    assert spec.y_derivative_entry(1, 1, 1) == ()
    for t in spec.entries[0][0]:
        for f in t.factors:
            assert f.axis == 0


def test_builtin_unknown_family():
    with pytest.raises(ValueError):
        co.builtin_family("checkerboard", [])


def test_transpose_and_symmetry():
    text = "a11 = 2; a22 = 2; a12 = sin(2*pi*z1); a21 = 0"
    spec = co.parse_coefficient(text)
    assert not spec.is_symmetric()
    assert spec.transpose().entries[1][0] == spec.entries[0][1]
    assert co.builtin_family("trig_general", [1.0]).is_symmetric()


def test_digest_stable_and_distinct():
    a = co.builtin_family("trig_product", [2, 1, 2, 1])
    b = co.builtin_family("trig_product", [2, 1, 2, 1])
    c = co.builtin_family("trig_product", [2, 1, 3, 1])
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_symbolic_y_derivative():
    spec = co.parse_coefficient("a11 = 2 + cos(2*pi*y1)*cos(2*pi*z1)")
    d = spec.y_derivative_entry(0, 0, 0)
    y, z = 0.21, 0.68
    val = sum(t.evaluate(np.array([y]), np.array([z])) for t in d)
    expect = -2 * np.pi * np.sin(2 * np.pi * y) * np.cos(2 * np.pi * z)
    assert np.isclose(val, expect)
