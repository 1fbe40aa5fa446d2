# tests/test_train.py
# Bucle de entrenamiento: determinismo, λ = 0, reanudación y divergencia

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

import trainers.train as train_mod
from analyzers.metrics import imrc
from extractors.cf_estimator import DirectionPdf
from generators.corruptions import add_floaters
from generators.synth_scene import synth_scene
from tests.conftest import CONFIG_DIR, ablation_spec
from trainers.cf_regularizer import LossGrads
from trainers.train import (LossReport, LossRow, RmsProp, TrainConfig, TrainState, apply_preset,
                            load_presets, train)
from utils.errors import ConfigurationError, DatasetError, NumericalError
from utils.field_grid import ShColorGrid


def _config(**cambios):
    base = dict(iterations=3, batch_rays=64, cf_rays=8, lambda_cf=0.0, lr_density=0.5,
                sh_degree=1, log_every=100)
    base.update(cambios)
    return TrainConfig(**base)


def _init(scene, degree=1):
    return scene.density, ShColorGrid.zeros_like(scene.density, degree)


def test_lambda_cero_es_solo_fotometrico(room_scene):
    con_rayos = train(room_scene.dataset, _init(room_scene), _config(cf_rays=8))
    sin_rayos = train(room_scene.dataset, _init(room_scene), _config(cf_rays=0))
    np.testing.assert_array_equal(con_rayos.density.values, sin_rayos.density.values)
    np.testing.assert_array_equal(con_rayos.color.coeffs, sin_rayos.color.coeffs)
    assert all(r.L_cf == 0.0 for r in con_rayos.report.rows)


def test_determinista(room_scene):
    a = train(room_scene.dataset, _init(room_scene), _config(lambda_cf=0.5, iterations=2))
    b = train(room_scene.dataset, _init(room_scene), _config(lambda_cf=0.5, iterations=2))
    np.testing.assert_array_equal(a.density.values, b.density.values)
    assert a.report.to_dataframe().equals(b.report.to_dataframe())
    assert all(r.L_cf > 0.0 for r in a.report.rows)


def test_no_modifica_la_inicializacion(room_scene):
    init = _init(room_scene)
    antes = init[0].values.copy()
    train(room_scene.dataset, init, _config())
    np.testing.assert_array_equal(init[0].values, antes)
    np.testing.assert_array_equal(init[1].coeffs, 0.0)


def test_reanudar_continua_la_numeracion(room_scene):
    primera = train(room_scene.dataset, _init(room_scene), _config())
    assert primera.state.iteration == 3
    segunda = train(room_scene.dataset, (primera.density, primera.color), _config(), state=primera.state)
    assert [r.iteration for r in segunda.report.rows] == [3, 4, 5]
    assert segunda.state.iteration == 6


def test_reanudar_equivale_a_una_sola_corrida(room_scene, tmp_path):
    seguida = train(room_scene.dataset, _init(room_scene),
                    _config(iterations=4, lambda_cf=0.5, decay_iterations=4))
    mitad = _config(iterations=2, lambda_cf=0.5, decay_iterations=4)
    primera = train(room_scene.dataset, _init(room_scene), mitad)
    primera.state.save(tmp_path / "state.json")
    estado = TrainState.load(tmp_path / "state.json")
    assert set(estado.optimizer) == {'density', 'color'}

    segunda = train(room_scene.dataset, (primera.density, primera.color), mitad, state=estado)
    np.testing.assert_array_equal(segunda.density.values, seguida.density.values)
    np.testing.assert_array_equal(segunda.color.coeffs, seguida.color.coeffs)
    assert [r.total for r in segunda.report.rows] == [r.total for r in seguida.report.rows[2:]]


def test_decaimiento_usa_la_iteracion_global(room_scene, monkeypatch):
    tasas = []
    original = RmsProp.step

    def registrar(self, nombre, valores, grad, lr):
        if nombre == 'density':
            tasas.append(lr)
        return original(self, nombre, valores, grad, lr)

    monkeypatch.setattr(RmsProp, "step", registrar)
    cfg = _config(iterations=2, lr_density=1.0, lr_decay=0.25, decay_iterations=4)
    train(room_scene.dataset, _init(room_scene), cfg, state=TrainState(iteration=2, seed=0))
    assert tasas == pytest.approx([0.25 ** 0.5, 0.25 ** 0.75])


def test_la_perdida_fotometrica_baja(room_scene):
    res = train(room_scene.dataset, _init(room_scene), _config(iterations=40, batch_rays=256))
    perdidas = [r.L_p for r in res.report.rows]
    assert np.mean(perdidas[-5:]) < np.mean(perdidas[:5])


def test_validacion_en_la_ultima_iteracion(room_scene):
    res = train(room_scene.dataset[2:], _init(room_scene), _config(iterations=2),
                holdout=room_scene.dataset[:2], holdout_depths=room_scene.depths[:2])
    assert res.report.rows[0].psnr is None
    assert res.report.last.psnr is not None
    assert res.report.last.depth_psnr is not None


def test_divergencia(room_scene, monkeypatch):
    def nan_loss(density, color, rays, gt, cfg=None):
        return LossGrads(float('nan'), np.zeros(density.dims), np.zeros(color.coeffs.shape))

    monkeypatch.setattr(train_mod, "photometric_loss", nan_loss)
    with pytest.raises(NumericalError) as info:
        train(room_scene.dataset, _init(room_scene), _config())
    assert info.value.exit_code == 3
    assert info.value.diagnostics['iteration'] == 0


def test_grado_inconsistente(room_scene):
    with pytest.raises(ConfigurationError):
        train(room_scene.dataset, _init(room_scene, degree=2), _config(sh_degree=1))


def test_dataset_vacio(room_scene):
    with pytest.raises(DatasetError):
        train([], _init(room_scene), _config())


def test_cero_iteraciones(room_scene):
    res = train(room_scene.dataset, _init(room_scene), _config(iterations=0))
    assert res.report.rows == []
    assert res.state.iteration == 0


def test_rmsprop_y_sgd():
    x = np.array([1.0, -2.0])
    g = np.array([0.5, -4.0])
    sgd = RmsProp(beta=None).step('x', x, g, 0.1)
    np.testing.assert_allclose(sgd, x - 0.1 * g)
    rms = RmsProp(beta=0.95, eps=0.0).step('x', x, g, 0.1)
    # primer paso: g / sqrt(0.05 g²)
    np.testing.assert_allclose(rms, x - 0.1 * np.sign(g) / np.sqrt(0.05))


def test_presets():
    ruta = CONFIG_DIR / "train_presets.json"
    assert 'plenoxels_dtu' in load_presets(ruta)
    cfg = apply_preset(TrainConfig(), 'synthetic', ruta)
    assert cfg.lambda_cf == 0.5
    assert cfg.cf_rays == 64
    dvgo = apply_preset(TrainConfig(), 'dvgo_nerf_synthetic_coarse', ruta)
    assert (dvgo.lambda_cf, dvgo.cf_rays) == (2.0, 10)
    with pytest.raises(ConfigurationError):
        apply_preset(TrainConfig(), 'no_existe', ruta)


def test_config_invalida():
    with pytest.raises(ValidationError):
        TrainConfig(lambda_cf=-1.0)
    with pytest.raises(ValidationError):
        TrainConfig(campo_desconocido=1)


def test_csv_de_perdidas(tmp_path):
    reporte = LossReport(0.1, [LossRow(0, 0.5, 0.2, 0.52), LossRow(1, 0.4, 0.1, 0.41)])
    ruta = tmp_path / "losses.csv"
    reporte.to_csv(ruta)
    LossReport(0.1, [LossRow(2, 0.3, 0.1, 0.31, psnr=20.0)]).to_csv(ruta, append=True)
    df = pd.read_csv(ruta)
    assert list(df.columns) == ['iteration', 'L_p', 'L_cf', 'total', 'psnr', 'depth_psnr']
    assert list(df['iteration']) == [0, 1, 2]


def test_estado(tmp_path):
    TrainState(iteration=12, seed=4).save(tmp_path / "state.json")
    assert TrainState.load(tmp_path / "state.json") == TrainState(12, 4)
    (tmp_path / "roto.json").write_text("{", encoding='utf-8')
    with pytest.raises(ConfigurationError):
        TrainState.load(tmp_path / "roto.json")

    acumulado = {'density': np.arange(3.0), 'color': np.ones((2, 2))}
    TrainState(iteration=5, seed=1, optimizer=acumulado).save(tmp_path / "state.json")
    leido = TrainState.load(tmp_path / "state.json")
    assert leido.iteration == 5
    np.testing.assert_array_equal(leido.optimizer['density'], [0.0, 1.0, 2.0])
    TrainState(iteration=6, seed=1).save(tmp_path / "state.json")
    assert TrainState.load(tmp_path / "state.json").optimizer == {}
    assert not TrainState.optimizer_path(tmp_path / "state.json").exists()


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_regularizacion_reduce_floaters(seed):
    scene = synth_scene(ablation_spec())
    init = (add_floaters(scene.density, 0.02, seed=seed), ShColorGrid.zeros_like(scene.density, 1))
    holdout = scene.dataset[::8]
    depths = scene.depths[::8]
    entrenar = [img for k, img in enumerate(scene.dataset) if k % 8]

    def correr(lam):
        cfg = TrainConfig(iterations=150, batch_rays=256, cf_rays=64, lambda_cf=lam, lr_density=1.0,
                          sh_degree=1, seed=seed, log_every=50)
        return train(entrenar, init, cfg, holdout=holdout, holdout_depths=depths)

    base = correr(0.0)
    regularizado = correr(0.5)
    assert regularizado.report.last.depth_psnr >= base.report.last.depth_psnr + 0.5
    pdf = DirectionPdf.uniform()
    assert imrc(regularizado.density, scene.dataset, pdf, 1) > imrc(base.density, scene.dataset, pdf, 1)
