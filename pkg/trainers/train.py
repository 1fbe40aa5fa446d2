# trainers/train.py
# Bucle de entrenamiento: pérdida fotométrica + λ · pérdida CF

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from analyzers.metrics import depth_psnr, psnr
from extractors.cf_estimator import EstimatorConfig
from generators.volume_renderer import RenderConfig, render_image
from trainers.cf_regularizer import CfCache, cf_loss, photometric_loss
from utils.camera import PosedImage, RayBatch, camera_rays
from utils.errors import ConfigurationError, DatasetError, NumericalError
from utils.field_grid import DensityGrid, ShColorGrid

STREAM_PHOTOMETRIC = 0
STREAM_CF = 1
LOSS_COLUMNS = ['iteration', 'L_p', 'L_cf', 'total', 'psnr', 'depth_psnr']


class TrainConfig(BaseModel):
    """
    Hiperparámetros del entrenamiento.

    lr_decay es el factor de la tasa al llegar a `decay_iterations`
    (decaimiento exponencial sobre la iteración global). Sin
    `decay_iterations` el horizonte es la última iteración de esta corrida.
    """

    model_config = ConfigDict(extra='forbid')

    lambda_cf: float = Field(default=0.1, ge=0)
    batch_rays: int = Field(default=256, ge=1)
    cf_rays: int = Field(default=25, ge=0)
    iterations: int = Field(default=200, ge=0)
    lr_density: float = Field(default=2.0, gt=0)
    lr_color: float = Field(default=0.05, gt=0)
    lr_decay: float = Field(default=0.1, gt=0, le=1)
    decay_iterations: Optional[int] = Field(default=None, ge=1)
    optimizer: Literal['rmsprop', 'sgd'] = 'rmsprop'
    rms_beta: float = Field(default=0.95, ge=0, lt=1)
    rms_eps: float = Field(default=1e-8, gt=0)
    sh_degree: int = Field(default=2, ge=0, le=4)
    seed: int = Field(default=0, ge=0)
    eval_every: int = Field(default=0, ge=0)
    log_every: int = Field(default=25, ge=1)
    cache_cf_estimates: bool = False
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    render: RenderConfig = Field(default_factory=RenderConfig)

    def estimator_config(self) -> EstimatorConfig:
        return self.estimator.model_copy(update={'sh_degree': self.sh_degree, 'render': self.render})


def load_presets(path: Union[str, Path]) -> Dict[str, dict]:
    try:
        return json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"No se pudieron leer los presets {path}: {e}") from e


def apply_preset(cfg: TrainConfig, name: str, path: Union[str, Path]) -> TrainConfig:
    """Aplica un preset (λ, |R_cf|, ...) sobre la configuración."""
    presets = load_presets(path)
    if name not in presets:
        raise ConfigurationError(f"Preset desconocido: {name}", {'disponibles': sorted(presets)})
    valores = {k: v for k, v in presets[name].items() if not k.startswith('_')}
    return TrainConfig.model_validate({**cfg.model_dump(), **valores})


@dataclass
class LossRow:
    iteration: int
    L_p: float
    L_cf: float
    total: float
    psnr: Optional[float] = None
    depth_psnr: Optional[float] = None


@dataclass
class LossReport:
    """Serie de pérdidas por iteración (+ métricas en vistas de validación)."""

    lambda_cf: float
    rows: List[LossRow] = field(default_factory=list)

    def add(self, row: LossRow) -> None:
        self.rows.append(row)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=LOSS_COLUMNS)

    def to_csv(self, path: Union[str, Path], append: bool = False) -> Path:
        path = Path(path)
        df = self.to_dataframe()
        escribir_cabecera = not (append and path.exists())
        df.to_csv(path, mode='a' if append else 'w', header=escribir_cabecera, index=False)
        return path

    @property
    def last(self) -> Optional[LossRow]:
        return self.rows[-1] if self.rows else None


@dataclass
class TrainState:
    """
    Estado para reanudar un entrenamiento.

    El contador va en JSON; los acumuladores del optimizador, si hay, en
    un .npz al lado (`state.json` → `state.optim.npz`).
    """

    iteration: int = 0
    seed: int = 0
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict, compare=False, repr=False)

    @staticmethod
    def optimizer_path(path: Union[str, Path]) -> Path:
        path = Path(path)
        return path.with_name(path.stem + ".optim.npz")

    def save(self, path: Union[str, Path]) -> None:
        datos = {'iteration': self.iteration, 'seed': self.seed}
        Path(path).write_text(json.dumps(datos, indent=2), encoding='utf-8')
        ruta_optim = self.optimizer_path(path)
        if self.optimizer:
            np.savez(ruta_optim, **self.optimizer)
        elif ruta_optim.exists():
            ruta_optim.unlink()

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainState":
        try:
            estado = cls(**json.loads(Path(path).read_text(encoding='utf-8')))
            ruta_optim = cls.optimizer_path(path)
            if ruta_optim.exists():
                with np.load(ruta_optim) as npz:
                    estado.optimizer = {k: npz[k] for k in npz.files}
            return estado
        except (OSError, ValueError, TypeError) as e:
            raise ConfigurationError(f"Estado de entrenamiento inválido {path}: {e}") from e


@dataclass
class TrainResult:
    density: DensityGrid
    color: ShColorGrid
    report: LossReport
    state: TrainState


class RmsProp:
    """RMSProp por elemento; con beta=None se comporta como SGD."""

    def __init__(self, beta: Optional[float] = 0.95, eps: float = 1e-8):
        self.beta = beta
        self.eps = eps
        self._acumulado: Dict[str, np.ndarray] = {}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._acumulado.items()}

    def load_state_dict(self, acumulado: Dict[str, np.ndarray]) -> None:
        self._acumulado = {k: np.array(v, dtype=np.float64) for k, v in acumulado.items()}

    def step(self, nombre: str, valores: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        if self.beta is None:
            return valores - lr * grad
        acc = self._acumulado.get(nombre)
        if acc is None:
            acc = np.zeros_like(grad)
        elif acc.shape != np.shape(grad):
            raise ConfigurationError(f"Estado del optimizador incompatible para '{nombre}': "
                                     f"{acc.shape} ≠ {np.shape(grad)}")
        acc = self.beta * acc + (1.0 - self.beta) * grad * grad
        self._acumulado[nombre] = acc
        return valores - lr * grad / (np.sqrt(acc) + self.eps)


def build_ray_pool(dataset: Sequence[PosedImage], density: DensityGrid,
                   cfg: RenderConfig) -> Tuple[RayBatch, np.ndarray]:
    """Todos los píxeles de entrenamiento como rayos + colores objetivo."""
    if not dataset:
        raise DatasetError("Dataset de entrenamiento vacío")
    lotes = [camera_rays(img.camera, density.geometry, cfg.t_near, cfg.t_far) for img in dataset]
    colores = np.concatenate([img.pixels.reshape(-1, 3) for img in dataset])
    return RayBatch.concat(lotes), colores


def evaluate_holdout(density: DensityGrid, color: ShColorGrid, holdout: Sequence[PosedImage],
                     cfg: RenderConfig,
                     ref_depths: Optional[Sequence[np.ndarray]] = None) -> Tuple[float, Optional[float]]:
    """PSNR y PSNR de profundidad medios sobre las vistas de validación."""
    psnrs, dpsnrs = [], []
    for k, img in enumerate(holdout):
        vista = render_image(density, color, img.camera, cfg)
        psnrs.append(psnr(np.clip(vista.rgb, 0.0, 1.0), img.pixels))
        if ref_depths is not None:
            dpsnrs.append(depth_psnr(vista.depth, ref_depths[k]))
    return float(np.mean(psnrs)), (float(np.mean(dpsnrs)) if dpsnrs else None)


def _rng(seed: int, iteracion: int, flujo: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteracion, flujo])


def train(dataset: Sequence[PosedImage], init: Tuple[DensityGrid, ShColorGrid], cfg: TrainConfig,
          state: Optional[TrainState] = None, holdout: Optional[Sequence[PosedImage]] = None,
          holdout_depths: Optional[Sequence[np.ndarray]] = None) -> TrainResult:
    """
    Entrena densidad y color SH con L = L_p + λ·L_cf.

    Parámetros:
    - dataset: vistas de entrenamiento
    - init: (densidad, color) iniciales (no se modifican)
    - cfg: hiperparámetros
    - state: estado previo (la numeración de iteraciones continúa)
    - holdout, holdout_depths: vistas y profundidades de validación

    Cada iteración usa dos flujos aleatorios independientes derivados de
    (seed, iteración): uno para los rayos fotométricos y otro para los
    rayos CF. Con λ = 0 la trayectoria es idéntica a entrenar sin CF.

    Errores:
    - NumericalError si aparece una pérdida o gradiente no finito
    """
    density, color = init[0].copy(), init[1].copy()
    if color.degree != cfg.sh_degree:
        raise ConfigurationError(f"El color inicial es de grado {color.degree}, "
                                 f"la configuración pide {cfg.sh_degree}")
    state = state or TrainState(iteration=0, seed=cfg.seed)
    report = LossReport(cfg.lambda_cf)
    if cfg.iterations == 0:
        return TrainResult(density, color, report, state)

    pool, gt_pool = build_ray_pool(dataset, density, cfg.render)
    est_cfg = cfg.estimator_config()
    pdf = est_cfg.direction_pdf()
    optim = RmsProp(cfg.rms_beta if cfg.optimizer == 'rmsprop' else None, cfg.rms_eps)
    optim.load_state_dict(state.optimizer)
    horizonte = cfg.decay_iterations or state.iteration + cfg.iterations
    usar_cf = cfg.lambda_cf > 0 and cfg.cf_rays > 0
    cache = CfCache() if (usar_cf and cfg.cache_cf_estimates) else None

    logger.info(f"Entrenamiento: {cfg.iterations} iteraciones desde {state.iteration}, "
                f"λ={cfg.lambda_cf}, |R_cf|={cfg.cf_rays}, {len(pool)} rayos")

    for i in range(cfg.iterations):
        it = state.iteration + i
        sel = _rng(cfg.seed, it, STREAM_PHOTOMETRIC).integers(0, len(pool), cfg.batch_rays)
        lp = photometric_loss(density, color, pool.subset(sel), gt_pool[sel], cfg.render)

        L_cf = 0.0
        g_sigma = lp.grad_density
        if usar_cf:
            sel_cf = _rng(cfg.seed, it, STREAM_CF).integers(0, len(pool), cfg.cf_rays)
            cf = cf_loss(density, dataset, pool.subset(sel_cf), gt_pool[sel_cf], pdf,
                         cfg.sh_degree, est_cfg, cache)
            L_cf = cf.loss
            g_sigma = g_sigma + cfg.lambda_cf * cf.grad_density

        total = lp.loss + cfg.lambda_cf * L_cf
        if not (np.isfinite(total) and np.all(np.isfinite(g_sigma))
                and np.all(np.isfinite(lp.grad_color))):
            raise NumericalError("Divergencia durante el entrenamiento (pérdida o gradiente no finito)", {
                'iteration': it, 'L_p': lp.loss, 'L_cf': L_cf,
                'max_density': float(np.max(density.values)),
            })

        escala = cfg.lr_decay ** (it / horizonte)
        sigma = optim.step('density', density.values, g_sigma, cfg.lr_density * escala)
        density = density.with_values(np.maximum(sigma, 0.0))
        coefs = optim.step('color', color.coeffs, lp.grad_color, cfg.lr_color * escala)
        color = ShColorGrid(color.geometry, color.degree, coefs)

        fila = LossRow(it, lp.loss, L_cf, total)
        ultima = i == cfg.iterations - 1
        if holdout and (ultima or (cfg.eval_every and (i + 1) % cfg.eval_every == 0)):
            fila.psnr, fila.depth_psnr = evaluate_holdout(density, color, holdout, cfg.render,
                                                          holdout_depths)
        report.add(fila)

        if (i + 1) % cfg.log_every == 0 or ultima:
            logger.info(f"  it {it:>6} | L_p {lp.loss:.5f} | L_cf {L_cf:.5f} | total {total:.5f}")

    return TrainResult(density, color, report,
                       TrainState(state.iteration + cfg.iterations, cfg.seed, optim.state_dict()))
