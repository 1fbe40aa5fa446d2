# analyzers/fourier_lab.py
# Laboratorio 1D: estimadores de coeficientes de Fourier con muestreo no uniforme

"""
Modelo:  f̂(x) = A_0 + Σ_k [a_k cos(k·u) + b_k sin(k·u)]

Convenciones de dominio:
- literal: u = x (la base tal cual, sin reescalar)
- scaled:  u = πx / (2σ), período ajustado a la ventana [−2σ, 2σ]

Normalización Monte Carlo en ambos: Â_0 = (1/T) Σ f, â_k = (2/T) Σ f·cos(k·u).
Orden de los coeficientes (y de la estimación residual): A_0, a_1, b_1, a_2, b_2, ...
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Literal, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils.errors import ConfigurationError, EmptyBatchError

Domain = Literal['literal', 'scaled']
ESTIMATORS = ('plain', 'residual', 'least_squares', 'oracle')
MRMSE_COLUMNS = ['estimator', 'target', 'T', 'dc_addition', 'mrmse']


@dataclass
class FourierModel:
    """Coeficientes A_0, a_1..a_K, b_1..b_K."""

    a0: float
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if len(self.a) < 1 or len(self.a) != len(self.b):
            raise ConfigurationError("FourierModel requiere k_max ≥ 1 y len(a) == len(b)")

    @property
    def k_max(self) -> int:
        return len(self.a)

    def to_vector(self) -> np.ndarray:
        v = np.empty(2 * self.k_max + 1)
        v[0] = self.a0
        v[1::2] = self.a
        v[2::2] = self.b
        return v

    @classmethod
    def from_vector(cls, v) -> "FourierModel":
        v = np.asarray(v, dtype=np.float64)
        return cls(float(v[0]), v[1::2], v[2::2])

    def evaluate(self, x, domain: Domain = 'literal', sigma: float = 10.0) -> np.ndarray:
        return design_matrix(x, self.k_max, domain, sigma) @ self.to_vector()


def to_phase(x, domain: Domain, sigma: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if domain == 'literal':
        return x
    if domain == 'scaled':
        return np.pi * x / (2.0 * sigma)
    raise ConfigurationError(f"Dominio desconocido: {domain}")


def design_matrix(x, k_max: int, domain: Domain = 'literal', sigma: float = 10.0) -> np.ndarray:
    """Columnas [1, cos u, sin u, ..., cos K·u, sin K·u]; forma (..., 2K+1)."""
    u = to_phase(x, domain, sigma)
    cols = [np.ones_like(u)]
    for k in range(1, k_max + 1):
        cols.append(np.cos(k * u))
        cols.append(np.sin(k * u))
    return np.stack(cols, axis=-1)


def _mc_weights(T: int, k_max: int) -> np.ndarray:
    w = np.full(2 * k_max + 1, 2.0 / T)
    w[0] = 1.0 / T
    return w


# ── Funciones objetivo ─────────────────────────────────────────────────────

@dataclass
class TargetFunction:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    dc_addition: float = 0.0

    def __call__(self, x) -> np.ndarray:
        return self.fn(np.asarray(x, dtype=np.float64)) + self.dc_addition

    def with_dc(self, dc: float) -> "TargetFunction":
        return TargetFunction(self.name, self.fn, float(dc))


TARGETS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    'f1': lambda x: 2 + 0.03 * x ** 2 + 2 * np.sin(x) + np.cos(3 * x),
    'f2': lambda x: 10 - 0.02 * x + 0.01 * x ** 2 + np.cos(x) - np.sin(2 * x),
    'f3': lambda x: 5 + 0.05 * x ** 2 - 0.001 * x ** 3 - np.sin(x) + 2 * np.cos(2 * x),
}


def target(name: str, dc_addition: float = 0.0) -> TargetFunction:
    if name not in TARGETS:
        raise ConfigurationError(f"Función objetivo desconocida: {name}", {'disponibles': list(TARGETS)})
    return TargetFunction(name, TARGETS[name], float(dc_addition))


# ── Configuración del experimento ──────────────────────────────────────────

class ExperimentConfig(BaseModel):
    """Matriz del experimento MRMSE."""

    model_config = ConfigDict(extra='forbid')

    k_max: int = Field(default=3, ge=1)
    sigma: float = Field(default=10.0, gt=0)
    sample_counts: List[int] = Field(default_factory=lambda: list(range(10, 101, 10)))
    repeats: int = Field(default=10000, ge=1)
    eval_points: int = Field(default=1000, ge=2)
    seed: int = Field(default=0, ge=0)
    domain: Domain = 'literal'
    targets: List[str] = Field(default_factory=lambda: ['f1', 'f2', 'f3'])
    estimators: List[Literal['plain', 'residual', 'least_squares', 'oracle']] = Field(
        default_factory=lambda: ['plain', 'residual', 'least_squares'])
    dc_additions: List[float] = Field(default_factory=lambda: [0.0, 1.0, 5.0, 10.0, 50.0, 100.0])
    dc_target: str = 'f1'
    dc_samples: int = Field(default=100, ge=1)
    rounds: int = Field(default=1, ge=1)
    tolerance: float = Field(default=1e-9, ge=0)
    chunk: int = Field(default=2000, ge=1)

    @model_validator(mode='after')
    def _check(self):
        if not self.sample_counts or min(self.sample_counts) < 1:
            raise ValueError("sample_counts debe tener valores ≥ 1")
        if 'least_squares' in self.estimators:
            minimo = min(self.sample_counts + [self.dc_samples])
            if minimo <= 2 * self.k_max + 1:
                raise ValueError(f"mínimos cuadrados requiere T > 2·k_max+1 (T={minimo})")
        for nombre in self.targets + [self.dc_target]:
            if nombre not in TARGETS:
                raise ValueError(f"Función objetivo desconocida: {nombre}")
        return self

    def eval_grid(self) -> np.ndarray:
        return np.linspace(-2.0 * self.sigma, 2.0 * self.sigma, self.eval_points)


# ── Estimadores (vectorizados sobre repeticiones) ──────────────────────────

def _plain(phi: np.ndarray, f: np.ndarray, k_max: int) -> np.ndarray:
    T = phi.shape[-2]
    return _mc_weights(T, k_max) * np.einsum('rtn,rt->rn', phi, f)


def _residual(phi: np.ndarray, f: np.ndarray, k_max: int, rounds: int = 1,
              tolerance: float = 1e-9) -> np.ndarray:
    T = phi.shape[-2]
    w = _mc_weights(T, k_max)
    n = 2 * k_max + 1
    coef = np.zeros(phi.shape[:-2] + (n,))
    pred = np.zeros_like(f)
    for ronda in range(rounds):
        previo = coef.copy()
        for j in range(n):
            col = phi[..., j]
            resid = f - pred + coef[..., j:j + 1] * col
            nuevo = w[j] * np.sum(resid * col, axis=-1)
            pred += (nuevo - coef[..., j])[..., None] * col
            coef[..., j] = nuevo
        if ronda > 0 and np.max(np.abs(coef - previo), initial=0.0) < tolerance:
            break
    return coef


def _least_squares(phi: np.ndarray, f: np.ndarray) -> np.ndarray:
    # pinv por SVD, solución de norma mínima
    return np.einsum('rnt,rt->rn', np.linalg.pinv(phi), f)


def _as_samples(samples) -> Tuple[np.ndarray, np.ndarray]:
    x, fx = samples
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    fx = np.asarray(fx, dtype=np.float64).reshape(-1)
    if len(x) == 0:
        raise EmptyBatchError("No hay muestras para estimar")
    if len(x) != len(fx):
        raise ConfigurationError("x y f(x) deben tener la misma longitud")
    return x, fx


def estimate_plain_mc(samples, k_max: int, domain: Domain = 'literal',
                      sigma: float = 10.0) -> FourierModel:
    """
    Monte Carlo directo.

    Parámetros:
    - samples: (x, f(x))
    """
    x, fx = _as_samples(samples)
    phi = design_matrix(x, k_max, domain, sigma)[None]
    return FourierModel.from_vector(_plain(phi, fx[None], k_max)[0])


def estimate_residual_mc(samples, k_max: int, domain: Domain = 'literal', sigma: float = 10.0,
                         rounds: int = 1, tolerance: float = 1e-9) -> FourierModel:
    """
    Monte Carlo residual: cada coeficiente se estima sobre f menos las
    componentes ya estimadas (A_0 primero). Con rounds > 1 se resta en
    cada ronda todo el resto, hasta que el cambio sea menor que `tolerance`.
    """
    x, fx = _as_samples(samples)
    phi = design_matrix(x, k_max, domain, sigma)[None]
    return FourierModel.from_vector(_residual(phi, fx[None], k_max, rounds, tolerance)[0])


def estimate_least_squares(samples, k_max: int, domain: Domain = 'literal',
                           sigma: float = 10.0) -> FourierModel:
    """Mínimos cuadrados de norma mínima (pseudo-inversa). Requiere T ≥ 2·k_max + 1."""
    x, fx = _as_samples(samples)
    if len(x) < 2 * k_max + 1:
        raise ConfigurationError(f"Sistema subdeterminado: {len(x)} muestras para "
                                 f"{2 * k_max + 1} coeficientes")
    phi = design_matrix(x, k_max, domain, sigma)[None]
    return FourierModel.from_vector(_least_squares(phi, fx[None])[0])


def oracle_model(tgt: TargetFunction, cfg: ExperimentConfig) -> FourierModel:
    """
    Mejor modelo truncado: proyección L2 del objetivo sobre la grilla de
    evaluación. Su RMSE es el piso de truncamiento.
    """
    xs = cfg.eval_grid()
    psi = design_matrix(xs, cfg.k_max, cfg.domain, cfg.sigma)
    coef, *_ = np.linalg.lstsq(psi, tgt(xs), rcond=None)
    return FourierModel.from_vector(coef)


# ── Harness MRMSE ──────────────────────────────────────────────────────────

def _draws(cfg: ExperimentConfig, T: int):
    """
    Muestras x ~ N(0, σ²) por bloques de repeticiones.

    Dependen sólo de (seed, T, bloque): todos los estimadores y objetivos
    ven las mismas muestras.
    """
    for a in range(0, cfg.repeats, cfg.chunk):
        n = min(cfg.chunk, cfg.repeats - a)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, T, a // cfg.chunk]))
        yield rng.normal(0.0, cfg.sigma, size=(n, T))


def _fit(nombre: str, phi: np.ndarray, f: np.ndarray, cfg: ExperimentConfig,
         oracle: np.ndarray) -> np.ndarray:
    if nombre == 'plain':
        return _plain(phi, f, cfg.k_max)
    if nombre == 'residual':
        return _residual(phi, f, cfg.k_max, cfg.rounds, cfg.tolerance)
    if nombre == 'least_squares':
        return _least_squares(phi, f)
    if nombre == 'oracle':
        return np.broadcast_to(oracle, (len(f), len(oracle)))
    raise ConfigurationError(f"Estimador desconocido: {nombre}")


def run_mrmse_multi(cfg: ExperimentConfig, estimators: List[str], tgt: TargetFunction,
                    T: int) -> Dict[str, float]:
    """MRMSE de varios estimadores con las mismas muestras."""
    xs = cfg.eval_grid()
    psi = design_matrix(xs, cfg.k_max, cfg.domain, cfg.sigma)
    f_eval = tgt(xs)
    oracle = oracle_model(tgt, cfg).to_vector() if 'oracle' in estimators else None

    sumas = {e: 0.0 for e in estimators}
    for x in _draws(cfg, T):
        phi = design_matrix(x, cfg.k_max, cfg.domain, cfg.sigma)
        f = tgt(x)
        for e in estimators:
            coef = _fit(e, phi, f, cfg, oracle)
            rmse = np.sqrt(np.mean((coef @ psi.T - f_eval) ** 2, axis=-1))
            sumas[e] += float(np.sum(rmse))
    return {e: s / cfg.repeats for e, s in sumas.items()}


def run_mrmse(cfg: ExperimentConfig, estimator: str, tgt: Union[str, TargetFunction]) -> Dict[int, float]:
    """MRMSE por cantidad de muestras T para un estimador y un objetivo."""
    tgt = target(tgt) if isinstance(tgt, str) else tgt
    return {T: run_mrmse_multi(cfg, [estimator], tgt, T)[estimator] for T in cfg.sample_counts}


def run_benchmark(cfg: ExperimentConfig) -> pd.DataFrame:
    """Matriz completa: objetivos × estimadores × T (sin adición DC)."""
    filas = []
    for nombre in cfg.targets:
        tgt = target(nombre)
        for T in cfg.sample_counts:
            res = run_mrmse_multi(cfg, list(cfg.estimators), tgt, T)
            filas += [{'estimator': e, 'target': nombre, 'T': T, 'dc_addition': 0.0, 'mrmse': v}
                      for e, v in res.items()]
        logger.debug(f"MRMSE {nombre}: listo ({len(cfg.sample_counts)} valores de T)")
    return pd.DataFrame(filas, columns=MRMSE_COLUMNS)


def run_dc_table(cfg: ExperimentConfig) -> pd.DataFrame:
    """Tabla de adiciones DC sobre `dc_target` con T = dc_samples."""
    filas = []
    for dc in cfg.dc_additions:
        tgt = target(cfg.dc_target, dc)
        res = run_mrmse_multi(cfg, list(cfg.estimators), tgt, cfg.dc_samples)
        filas += [{'estimator': e, 'target': cfg.dc_target, 'T': cfg.dc_samples,
                   'dc_addition': float(dc), 'mrmse': v} for e, v in res.items()]
    return pd.DataFrame(filas, columns=MRMSE_COLUMNS)


def write_gnuplot(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    """
    Datos para gnuplot: un bloque por objetivo (separados por dos líneas
    en blanco), columnas T y una por estimador.
    """
    path = Path(path)
    estimadores = list(dict.fromkeys(df['estimator']))
    bloques = []
    for nombre, grupo in df.groupby('target', sort=False):
        tabla = grupo.pivot_table(index='T', columns='estimator', values='mrmse')
        lineas = [f"# target {nombre}", "# T " + " ".join(estimadores)]
        for T, fila in tabla.iterrows():
            lineas.append(f"{int(T)} " + " ".join(f"{fila[e]:.6f}" for e in estimadores))
        bloques.append("\n".join(lineas))
    path.write_text("\n\n\n".join(bloques) + "\n", encoding='utf-8')
    return path
