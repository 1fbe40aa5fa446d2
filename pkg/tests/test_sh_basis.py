# tests/test_sh_basis.py
# Base SH real: normalización, orden de índices y evaluación de color

from math import pi, sqrt

import numpy as np
import pytest

from utils.errors import ConfigurationError, NormalizationError
from utils.sh_basis import (C0, ShCoeffs, basis_order, eval_basis, eval_color, eval_color_array,
                            fibonacci_sphere, num_coeffs, project_to_basis, sh_index)


def test_indices_canonicos():
    assert [sh_index(l, m) for l, m in basis_order(4)] == list(range(25))
    assert num_coeffs(0) == 1
    assert num_coeffs(2) == 9
    assert num_coeffs(4) == 25


def test_ortonormalidad_hasta_grado_4():
    n = 200000
    dirs = fibonacci_sphere(n)
    base = eval_basis(4, dirs)
    gram = (4.0 * pi / n) * (base.T @ base)
    np.testing.assert_allclose(gram, np.eye(25), atol=1e-3)


@pytest.mark.parametrize("l", range(5))
def test_zonal_en_el_polo(l):
    valor = eval_basis(4, np.array([0.0, 0.0, 1.0]))[sh_index(l, 0)]
    assert valor == pytest.approx(sqrt((2 * l + 1) / (4 * pi)), rel=1e-12)


def test_zonal_no_zonal_nula_en_el_polo():
    base = eval_basis(4, np.array([0.0, 0.0, 1.0]))
    for l, m in basis_order(4):
        if m != 0:
            assert abs(base[sh_index(l, m)]) < 1e-12


def test_signo_sin_condon_shortley():
    # Y_1^1 ∝ +x, Y_1^-1 ∝ +y
    base = eval_basis(1, np.array([1.0, 0.0, 0.0]))
    assert base[sh_index(1, 1)] > 0
    base = eval_basis(1, np.array([0.0, 1.0, 0.0]))
    assert base[sh_index(1, -1)] > 0


def test_forma_vectorizada():
    dirs = fibonacci_sphere(12).reshape(3, 4, 3)
    assert eval_basis(3, dirs).shape == (3, 4, 16)


def test_direccion_no_unitaria():
    with pytest.raises(NormalizationError):
        eval_basis(2, np.array([0.0, 0.0, 2.0]))
    with pytest.raises(NormalizationError):
        eval_basis(2, np.zeros(3))


def test_grado_fuera_de_rango():
    with pytest.raises(ConfigurationError):
        eval_basis(5, np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ConfigurationError):
        ShCoeffs.zeros(-1)


def test_color_dc_independiente_de_la_vista():
    sh = ShCoeffs.from_rgb([0.2, 0.5, 0.9], degree=3)
    colores = eval_color(sh, fibonacci_sphere(50))
    np.testing.assert_allclose(colores, np.tile([0.2, 0.5, 0.9], (50, 1)), atol=1e-12)
    assert sh.coeffs[0, 0] == pytest.approx(0.2 / C0)


def test_forma_de_coeficientes_invalida():
    with pytest.raises(ConfigurationError):
        ShCoeffs(2, np.zeros((3, 4)))


def test_eval_color_array_coincide(rng):
    dirs = fibonacci_sphere(7)
    coefs = rng.normal(size=(7, 3, 9))
    base = eval_basis(2, dirs)
    esperado = np.stack([eval_color(ShCoeffs(2, coefs[i]), dirs[i]) for i in range(7)])
    np.testing.assert_allclose(eval_color_array(coefs, base), esperado, atol=1e-12)


def test_proyeccion_recupera_coeficientes(rng):
    sh = ShCoeffs(2, rng.normal(0.0, 0.3, size=(3, 9)))
    estimado = project_to_basis(lambda d: eval_color(sh, d), degree=2, n=100000)
    np.testing.assert_allclose(estimado.coeffs, sh.coeffs, atol=1e-3)


def test_to_dict_conserva_el_orden(rng):
    sh = ShCoeffs(1, rng.normal(size=(3, 4)))
    datos = sh.to_dict()
    assert datos['order'] == [[0, 0], [1, -1], [1, 0], [1, 1]]
    np.testing.assert_array_equal(ShCoeffs.from_dict(datos).coeffs, sh.coeffs)


def test_from_dict_reordena():
    datos = {'degree': 1, 'order': [[1, 1], [0, 0], [1, -1], [1, 0]],
             'coeffs': [[3.0, 0.0, 1.0, 2.0]] * 3}
    sh = ShCoeffs.from_dict(datos)
    np.testing.assert_array_equal(sh.coeffs[0], [0.0, 1.0, 2.0, 3.0])


def test_fibonacci_hemisferio():
    dirs = fibonacci_sphere(100, hemisphere=True)
    assert np.all(dirs[:, 2] > 0)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
