# tests/test_field_grid.py
# Grillas: interpolación trilineal, scatter adjunto y formato de checkpoint

import numpy as np
import pytest

from parsers.checkpoint import HEADER, MAGIC, load_checkpoint, save_checkpoint
from utils.errors import CheckpointError, ConfigurationError
from utils.field_grid import (DensityGrid, GridGeometry, ShColorGrid, dilate_mask, max_filter3,
                              sample_density, sample_sh, sample_sh_array, scatter_to_voxels)
from utils.sh_basis import ShCoeffs


@pytest.fixture
def grid(rng):
    return DensityGrid.create((8, 6, 5), [-1, -1, -1], [1, 2, 0.5],
                              values=rng.uniform(0.0, 3.0, size=(8, 6, 5)))


def test_centros_devuelven_el_valor_del_voxel(grid):
    centros = grid.geometry.voxel_centers()
    np.testing.assert_allclose(sample_density(grid, centros), grid.values.reshape(-1), atol=1e-12)


def test_campo_lineal_se_interpola_exacto(rng):
    geo = GridGeometry((10, 10, 10), [0, 0, 0], [1, 1, 1])
    a, b = np.array([0.5, -2.0, 1.5]), 3.0
    valores = geo.voxel_centers() @ a + b
    grid = DensityGrid(geo, (valores - valores.min()).reshape(geo.dims))
    # sólo entre el primer y el último centro (afuera se replica el borde)
    puntos = rng.uniform(0.05, 0.95, size=(200, 3))
    esperado = puntos @ a + b - valores.min()
    np.testing.assert_allclose(sample_density(grid, puntos), esperado, atol=1e-6)


def test_fuera_de_la_caja_es_cero(grid):
    puntos = np.array([[5.0, 0.0, 0.0], [0.0, -1.5, 0.0], [0.0, 0.0, 0.6]])
    np.testing.assert_array_equal(sample_density(grid, puntos), 0.0)


def test_pesos_suman_uno_dentro(grid, rng):
    puntos = rng.uniform([-1, -1, -1], [1, 2, 0.5], size=(100, 3))
    _, w = grid.geometry.trilinear_stencil(puntos)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(w >= 0)


def test_scatter_es_adjunto_de_la_interpolacion(grid, rng):
    puntos = rng.uniform([-1, -1, -1], [1, 2, 0.5], size=(50, 3))
    g = rng.normal(size=50)
    idx, w = grid.geometry.trilinear_stencil(puntos)
    izquierda = np.dot(sample_density(grid, puntos), g)
    acumulado = scatter_to_voxels(grid.geometry.n_voxels, idx, w, g)
    derecha = np.dot(grid.values.reshape(-1), acumulado)
    assert izquierda == pytest.approx(derecha, rel=1e-12)


def test_scatter_multicanal(grid, rng):
    puntos = rng.uniform([-1, -1, -1], [1, 2, 0.5], size=(20, 3))
    valores = rng.normal(size=(20, 3))
    idx, w = grid.geometry.trilinear_stencil(puntos)
    junto = scatter_to_voxels(grid.geometry.n_voxels, idx, w, valores)
    for c in range(3):
        np.testing.assert_allclose(junto[:, c],
                                   scatter_to_voxels(grid.geometry.n_voxels, idx, w, valores[:, c]))


def test_densidad_negativa_o_no_finita():
    with pytest.raises(ConfigurationError):
        DensityGrid.create((2, 2, 2), [0, 0, 0], [1, 1, 1], values=-np.ones((2, 2, 2)))
    grid = DensityGrid.create((2, 2, 2), [0, 0, 0], [1, 1, 1])
    with pytest.raises(ConfigurationError):
        grid.with_values(np.full((2, 2, 2), np.nan))


def test_geometria_invalida():
    with pytest.raises(ConfigurationError):
        GridGeometry((0, 4, 4), [0, 0, 0], [1, 1, 1])
    with pytest.raises(ConfigurationError):
        GridGeometry((4, 4, 4), [0, 0, 0], [1, -1, 1])


def test_color_interpolado_en_el_centro(rng):
    density = DensityGrid.create((4, 4, 4), [0, 0, 0], [1, 1, 1])
    color = ShColorGrid(density.geometry, 1, rng.normal(size=(4, 4, 4, 3, 4)))
    centro = density.geometry.voxel_centers(np.array([21]))[0]
    np.testing.assert_allclose(sample_sh(color, centro).coeffs, color.flat[21].reshape(3, 4), atol=1e-12)
    assert sample_sh_array(color, np.zeros((5, 3)) + 2.0).shape == (5, 3, 4)
    np.testing.assert_array_equal(sample_sh_array(color, np.full((1, 3), 2.0)), 0.0)


def test_from_uniform():
    density = DensityGrid.create((3, 3, 3), [0, 0, 0], [1, 1, 1])
    color = ShColorGrid.from_uniform(density, ShCoeffs.from_rgb([0.1, 0.2, 0.3], 2))
    assert color.coeffs.shape == (3, 3, 3, 3, 9)
    np.testing.assert_array_equal(color.coeffs[1, 2, 0], color.coeffs[0, 0, 0])


def test_dilatacion_de_un_voxel():
    mascara = np.zeros((7, 7, 7), dtype=bool)
    mascara[3, 3, 3] = True
    assert dilate_mask(mascara, 1).sum() == 27
    assert dilate_mask(mascara, 2).sum() == 125


def test_max_filter_relleno():
    valores = np.ones((3, 3, 3))
    valores[1, 1, 1] = 5.0
    assert np.all(max_filter3(valores) == 5.0)
    borde = np.zeros((3, 3, 3))
    assert np.all(max_filter3(borde, fill=2.0) == 2.0)
    assert np.all(max_filter3(borde) == 0.0)


# ── Checkpoint ─────────────────────────────────────────────────────────────

def test_checkpoint_ida_y_vuelta(tmp_path, rng):
    grid = DensityGrid.create((4, 4, 4), [-1, -1, -1], [1, 2, 0.5],
                              values=rng.uniform(0.0, 3.0, size=(4, 4, 4)))
    color = ShColorGrid(grid.geometry, 2, rng.normal(size=(4, 4, 4, 3, 9)))
    save_checkpoint(tmp_path / "a.cfrf", grid, color)
    density, leido = load_checkpoint(tmp_path / "a.cfrf")

    assert density.dims == grid.dims
    np.testing.assert_array_equal(density.geometry.bbox_max, grid.geometry.bbox_max)
    np.testing.assert_array_equal(density.values, grid.values)
    np.testing.assert_array_equal(leido.coeffs, color.coeffs)

    save_checkpoint(tmp_path / "b.cfrf", density, leido)
    assert (tmp_path / "a.cfrf").read_bytes() == (tmp_path / "b.cfrf").read_bytes()


def test_grillas_representables_en_f32(rng):
    valores = rng.uniform(0.0, 3.0, size=(2, 2, 2))
    grid = DensityGrid.create((2, 2, 2), [0, 0, 0], [1, 1, 1], values=valores)
    np.testing.assert_array_equal(grid.values, valores.astype(np.float32))
    np.testing.assert_array_equal(grid.with_values(grid.values).values, grid.values)


def test_checkpoint_sin_color(tmp_path, grid):
    save_checkpoint(tmp_path / "d.cfrf", grid)
    density, color = load_checkpoint(tmp_path / "d.cfrf")
    assert color is None
    assert density.dims == (8, 6, 5)


def test_checkpoint_orden_de_ejes(tmp_path):
    # x es el índice más rápido en disco
    valores = np.zeros((3, 2, 2), dtype=np.float64)
    valores[1, 0, 0] = 7.0
    grid = DensityGrid.create((3, 2, 2), [0, 0, 0], [1, 1, 1], values=valores)
    save_checkpoint(tmp_path / "o.cfrf", grid)
    crudo = np.frombuffer((tmp_path / "o.cfrf").read_bytes(), dtype='<f4', offset=HEADER.itemsize)
    assert crudo[1] == 7.0
    assert crudo.sum() == 7.0


def test_checkpoint_truncado(tmp_path, grid):
    ruta = save_checkpoint(tmp_path / "t.cfrf", grid)
    ruta.write_bytes(ruta.read_bytes()[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(ruta)
    ruta.write_bytes(b"CFRF")
    with pytest.raises(CheckpointError):
        load_checkpoint(ruta)


def test_checkpoint_con_bytes_sobrantes(tmp_path, grid):
    ruta = save_checkpoint(tmp_path / "s.cfrf", grid, ShColorGrid.zeros_like(grid, 1))
    ruta.write_bytes(ruta.read_bytes() + b"\x00" * 4)
    with pytest.raises(CheckpointError) as info:
        load_checkpoint(ruta)
    assert info.value.diagnostics["bytes"] == info.value.diagnostics["esperado"] + 4


def test_checkpoint_magic_invalido(tmp_path, grid):
    ruta = save_checkpoint(tmp_path / "m.cfrf", grid)
    ruta.write_bytes(b"NOPE" + ruta.read_bytes()[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(ruta)


def test_checkpoint_grado_invalido(tmp_path):
    header = np.zeros((), dtype=HEADER)
    header['magic'] = MAGIC
    header['version'] = 1
    header['flags'] = 1
    header['dims'] = (2, 2, 2)
    header['bbox'] = (0, 0, 0, 1, 1, 1)
    header['degree'] = 5
    ruta = tmp_path / "g.cfrf"
    ruta.write_bytes(header.tobytes() + np.zeros(8 * 100, dtype='<f4').tobytes())
    with pytest.raises(CheckpointError):
        load_checkpoint(ruta)


def test_checkpoint_inexistente(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "no_existe.cfrf")
