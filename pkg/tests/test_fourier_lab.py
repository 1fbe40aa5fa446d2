# tests/test_fourier_lab.py
# Laboratorio de Fourier: estimadores, orden de MRMSE y tabla de adiciones DC

import numpy as np
import pytest
from pydantic import ValidationError

from analyzers.fourier_lab import (MRMSE_COLUMNS, ExperimentConfig, FourierModel, TargetFunction,
                                   design_matrix, estimate_least_squares, estimate_plain_mc,
                                   estimate_residual_mc, oracle_model, run_benchmark, run_dc_table,
                                   run_mrmse, target, write_gnuplot)
from utils.errors import ConfigurationError, EmptyBatchError


def _trig(x):
    return 1.0 + 2.0 * np.cos(x) - np.sin(3.0 * x)


TRIG = FourierModel(1.0, [2.0, 0.0, 0.0], [0.0, 0.0, -1.0])


def _chico(**cambios):
    base = dict(repeats=500, chunk=250, sample_counts=[10, 50, 100], eval_points=400)
    base.update(cambios)
    return ExperimentConfig(**base)


def test_orden_del_vector():
    modelo = FourierModel(0.5, [1.0, 2.0], [3.0, 4.0])
    np.testing.assert_array_equal(modelo.to_vector(), [0.5, 1.0, 3.0, 2.0, 4.0])
    copia = FourierModel.from_vector(modelo.to_vector())
    np.testing.assert_array_equal(copia.a, modelo.a)
    assert design_matrix(np.zeros((4, 6)), 2).shape == (4, 6, 5)


def test_evaluar_modelo():
    x = np.linspace(-3.0, 3.0, 11)
    np.testing.assert_allclose(TRIG.evaluate(x), _trig(x), atol=1e-12)
    escalado = TRIG.evaluate(x, domain='scaled', sigma=10.0)
    np.testing.assert_allclose(escalado, _trig(np.pi * x / 20.0), atol=1e-12)


def test_dominio_desconocido():
    with pytest.raises(ConfigurationError):
        design_matrix(np.zeros(3), 2, domain='polar')


def test_grilla_uniforme_es_exacta():
    T = 16
    x = -np.pi + 2.0 * np.pi * np.arange(T) / T
    for estimar in (estimate_plain_mc, estimate_residual_mc):
        modelo = estimar((x, _trig(x)), 3)
        np.testing.assert_allclose(modelo.to_vector(), TRIG.to_vector(), atol=1e-12)


def test_minimos_cuadrados_recupera_polinomio(rng):
    x = rng.normal(0.0, 10.0, size=20)
    modelo = estimate_least_squares((x, _trig(x)), 3)
    np.testing.assert_allclose(modelo.to_vector(), TRIG.to_vector(), atol=1e-8)


def test_residual_primero_resta_la_media(rng):
    x = rng.normal(0.0, 10.0, size=30)
    fx = 7.0 + np.cos(x)
    residual = estimate_residual_mc((x, fx), 1)
    directo = estimate_plain_mc((x, fx), 1)
    assert residual.a0 == pytest.approx(np.mean(fx))
    assert directo.a0 == pytest.approx(np.mean(fx))
    # el término constante se filtra a a_1 sólo en el estimador directo
    esperado = 2.0 / 30 * np.sum((fx - np.mean(fx)) * np.cos(x))
    assert residual.a[0] == pytest.approx(esperado)


def test_errores_de_muestras():
    with pytest.raises(EmptyBatchError):
        estimate_plain_mc((np.zeros(0), np.zeros(0)), 2)
    with pytest.raises(ConfigurationError):
        estimate_least_squares((np.arange(5.0), np.arange(5.0)), 3)
    with pytest.raises(ConfigurationError):
        estimate_residual_mc((np.arange(5.0), np.arange(4.0)), 1)


def test_oraculo_de_un_polinomio_trigonometrico():
    cfg = ExperimentConfig(eval_points=2000)
    modelo = oracle_model(TargetFunction('trig', _trig), cfg)
    np.testing.assert_allclose(modelo.to_vector(), TRIG.to_vector(), atol=1e-8)


def test_objetivos():
    f1 = target('f1')
    assert f1(np.array([0.0]))[0] == pytest.approx(3.0)
    assert target('f1', 5.0)(np.array([0.0]))[0] == pytest.approx(8.0)
    assert f1.with_dc(1.0).dc_addition == 1.0
    with pytest.raises(ConfigurationError):
        target('f9')


def test_config_invalida():
    with pytest.raises(ValidationError):
        ExperimentConfig(sample_counts=[5, 10])
    with pytest.raises(ValidationError):
        ExperimentConfig(targets=['f1', 'g'])
    with pytest.raises(ValidationError):
        ExperimentConfig(domain='polar')
    # sin mínimos cuadrados se admiten pocas muestras
    ExperimentConfig(sample_counts=[2], estimators=['plain', 'residual'])


def test_orden_de_estimadores():
    cfg = _chico()
    df = run_benchmark(cfg)
    assert list(df.columns) == MRMSE_COLUMNS
    assert len(df) == 3 * 3 * 3
    for nombre in cfg.targets:
        sub = df[df['target'] == nombre].pivot_table(index='T', columns='estimator', values='mrmse')
        assert np.all(sub['residual'] <= sub['plain'])


def test_oraculo_es_el_piso():
    cfg = _chico(sample_counts=[20, 100], estimators=['plain', 'residual', 'least_squares', 'oracle'])
    df = run_benchmark(cfg)
    for (_, _), grupo in df.groupby(['target', 'T']):
        valores = dict(zip(grupo['estimator'], grupo['mrmse']))
        assert valores['oracle'] <= min(valores['plain'], valores['residual'],
                                        valores['least_squares']) + 1e-12


def test_tabla_dc():
    cfg = _chico(repeats=2000, chunk=1000)
    df = run_dc_table(cfg)
    assert len(df) == 6 * 3
    for nombre in ('residual', 'least_squares'):
        valores = df[df['estimator'] == nombre]['mrmse'].to_numpy()
        assert (valores.max() - valores.min()) / valores.min() < 0.005
    directo = df[df['estimator'] == 'plain'].sort_values('dc_addition')['mrmse'].to_numpy()
    assert np.all(np.diff(directo) > 0)


def test_determinista():
    cfg = _chico(repeats=200, targets=['f2'])
    assert run_benchmark(cfg).equals(run_benchmark(cfg))
    assert run_mrmse(cfg, 'plain', 'f2') == run_mrmse(cfg, 'plain', target('f2'))


def test_dominio_escalado():
    df = run_benchmark(_chico(repeats=100, domain='scaled', targets=['f1']))
    assert np.all(np.isfinite(df['mrmse']))
    assert np.all(df['mrmse'] > 0)


def test_gnuplot(tmp_path):
    df = run_benchmark(_chico(repeats=50))
    texto = write_gnuplot(df, tmp_path / "mrmse.dat").read_text(encoding='utf-8')
    bloques = texto.strip().split("\n\n\n")
    assert len(bloques) == 3
    assert bloques[0].splitlines()[0] == "# target f1"
    assert bloques[0].splitlines()[1] == "# T plain residual least_squares"
    assert len(bloques[2].splitlines()) == 2 + 3


@pytest.mark.slow
def test_orden_completo():
    df = run_benchmark(ExperimentConfig())
    for nombre in ('f1', 'f2', 'f3'):
        sub = df[df['target'] == nombre].pivot_table(index='T', columns='estimator', values='mrmse')
        assert np.all(sub['residual'] <= sub['plain'])
        if nombre == 'f1':
            # con 10 muestras el sistema queda mal condicionado
            assert sub.loc[10, 'least_squares'] > sub.loc[10, 'plain']


@pytest.mark.slow
def test_tabla_dc_completa():
    df = run_dc_table(ExperimentConfig())
    tabla = df.pivot_table(index='dc_addition', columns='estimator', values='mrmse')
    for nombre in ('residual', 'least_squares'):
        assert (tabla[nombre].max() - tabla[nombre].min()) / tabla[nombre].min() < 0.005
    assert np.all(np.diff(tabla['plain'].to_numpy()) > 0)
    assert tabla.loc[0.0, 'residual'] == pytest.approx(3.89, abs=0.3)
    assert tabla.loc[0.0, 'least_squares'] == pytest.approx(3.90, abs=0.3)
    assert tabla.loc[0.0, 'plain'] == pytest.approx(4.09, abs=0.3)
    assert tabla.loc[100.0, 'plain'] == pytest.approx(25.13, rel=0.03)
