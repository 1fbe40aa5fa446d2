# extractors/cf_estimator.py
# Estimación en forma cerrada del campo de color SH a partir de la densidad
# y de las imágenes con pose

"""
Para cada vóxel v y cada cámara k que lo ve:

    d_k     dirección de v hacia la cámara
    T_k     transmitancia de v a la cámara (peso de oclusión)
    c_k     color observado (muestreo bilineal en la proyección de v)

Los coeficientes se estiman en orden canónico (l, m):

    ĥ_l^m = Σ_k T_k · c̃_k · Y_l^m(d_k) / p(d_k)  /  Σ_k T_k

donde c̃_k es el residuo tras restar las componentes ya estimadas
(estrictamente anteriores). Cada canal se estima por separado.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import pi
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from generators.volume_renderer import (RenderConfig, iter_ray_chunks, march,
                                        segment_transmittance)
from utils.camera import PosedImage, RayBatch, project_points, sample_image_batch
from utils.errors import ConfigurationError
from utils.field_grid import DensityGrid, ShColorGrid, dilate_mask
from utils.sh_basis import ShCoeffs, check_unit, eval_basis, num_coeffs

UNIFORM_PDF = 1.0 / (4.0 * pi)
# Tope de elementos de la matriz vóxel × cámara × modo en la mezcla vMF
_VMF_BUDGET = 4_000_000


# ── Densidad de direcciones ────────────────────────────────────────────────

@dataclass
class DirectionPdf:
    """
    Densidad de probabilidad de las direcciones de observación.

    - uniform: 1/(4π)
    - mixture_vmf: promedio de vMF con concentración c centradas en `modes`.
      modes=None usa las direcciones de observación del propio vóxel.
    """

    kind: str = "uniform"
    concentration: float = 0.0
    modes: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "mixture_vmf"):
            raise ConfigurationError(f"Tipo de pdf desconocido: {self.kind}")
        if not np.isfinite(self.concentration) or self.concentration < 0:
            raise ConfigurationError(f"Concentración vMF negativa o no finita: {self.concentration}")
        if self.modes is not None:
            self.modes = check_unit(np.asarray(self.modes, dtype=np.float64).reshape(-1, 3))
            if len(self.modes) == 0:
                raise ConfigurationError("La mezcla vMF necesita al menos un modo")

    @classmethod
    def uniform(cls) -> "DirectionPdf":
        return cls("uniform")

    @classmethod
    def mixture_vmf(cls, concentration: float, modes=None) -> "DirectionPdf":
        return cls("mixture_vmf", float(concentration), modes)

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'concentration': self.concentration,
            'modes': None if self.modes is None else self.modes.tolist(),
        }


def vmf_density(c: float, cos_angle) -> np.ndarray:
    """
    Densidad vMF en la esfera, c·exp(c μ·d) / (4π sinh c).

    Forma estable: c / (2π(1 − e^{−2c})) · exp(c(μ·d − 1)); c = 0 es uniforme.
    """
    cos_angle = np.asarray(cos_angle, dtype=np.float64)
    if c == 0:
        return np.full(cos_angle.shape, UNIFORM_PDF)
    return c / (2.0 * pi * -np.expm1(-2.0 * c)) * np.exp(c * (cos_angle - 1.0))


def pdf_eval(pdf: DirectionPdf, d, modes=None):
    """
    Evalúa p(d) para una dirección (3,) o un lote (..., 3).

    Para mezclas sin modos propios hay que pasar `modes`.
    """
    d = check_unit(d)
    if pdf.kind == "uniform":
        valores = np.full(d.shape[:-1], UNIFORM_PDF)
    else:
        mu = pdf.modes if modes is None else check_unit(np.asarray(modes).reshape(-1, 3))
        if mu is None:
            raise ConfigurationError("La mezcla vMF no tiene modos")
        valores = vmf_density(pdf.concentration, d @ mu.T).mean(axis=-1)
    return float(valores) if valores.ndim == 0 else valores


def _pdf_matrix(pdf: DirectionPdf, dirs: np.ndarray, visible: np.ndarray) -> np.ndarray:
    """p(d_k) por vóxel y cámara, (V, K)."""
    if pdf.kind == "uniform":
        return np.full(visible.shape, UNIFORM_PDF)
    if pdf.modes is not None:
        return vmf_density(pdf.concentration, dirs @ pdf.modes.T).mean(axis=-1)
    # modos = observaciones visibles del propio vóxel
    cos = np.einsum('vkd,vjd->vkj', dirs, dirs)
    dens = vmf_density(pdf.concentration, cos) * visible[:, None, :]
    n_modos = np.maximum(visible.sum(axis=-1), 1)[:, None]
    p = dens.sum(axis=-1) / n_modos
    return np.where(visible, p, UNIFORM_PDF)


# ── Configuración ──────────────────────────────────────────────────────────

class EstimatorConfig(BaseModel):
    """Parámetros de la estimación en forma cerrada."""

    model_config = ConfigDict(extra='forbid')

    sh_degree: int = Field(default=2, ge=0, le=4)
    use_occlusion: bool = True
    use_residual: bool = True
    rounds: int = Field(default=1, ge=1)
    tolerance: float = Field(default=1e-6, ge=0)
    min_density: float = Field(default=0.0, ge=0)
    dilate: int = Field(default=1, ge=0)
    pdf_kind: Literal["uniform", "mixture_vmf"] = "uniform"
    vmf_concentration: float = Field(default=0.0, ge=0)
    voxel_chunk: int = Field(default=256, ge=1)
    threads: int = Field(default=1, ge=1)
    render: RenderConfig = Field(default_factory=RenderConfig)

    def direction_pdf(self) -> DirectionPdf:
        if self.pdf_kind == "uniform":
            return DirectionPdf.uniform()
        return DirectionPdf.mixture_vmf(self.vmf_concentration)


# ── Observaciones y residuos ───────────────────────────────────────────────

@dataclass
class VoxelObservations:
    """Observaciones de un vóxel, una fila por cámara del dataset."""

    directions: np.ndarray
    weights: np.ndarray
    colors: np.ndarray
    visible: np.ndarray

    @property
    def n_visible(self) -> int:
        return int(np.sum(self.visible))


@dataclass
class ResidualColor:
    """Residuo c̃_k tras restar todas las componentes estimadas, (K, 3)."""

    values: np.ndarray
    weights: np.ndarray

    def mean_abs(self) -> np.ndarray:
        """Media ponderada por T de |c̃| por canal."""
        total = self.weights.sum()
        if total <= 0:
            return np.zeros(3)
        return (self.weights[:, None] * np.abs(self.values)).sum(axis=0) / total

    def mean_square(self) -> float:
        """Media ponderada por T de c̃² (promedio de canales)."""
        total = self.weights.sum()
        if total <= 0:
            return 0.0
        return float((self.weights * np.mean(self.values ** 2, axis=-1)).sum() / total)


@dataclass
class VoxelEstimate:
    coeffs: ShCoeffs
    estimated: bool
    residual: ResidualColor


def _gather_batch(centers: np.ndarray, density: DensityGrid, dataset: Sequence[PosedImage],
                  render_cfg: RenderConfig, use_occlusion: bool):
    """
    Observaciones de V vóxeles en K cámaras.

    Retorna dirs (V, K, 3), T (V, K), colores (V, K, 3), visible (V, K).
    """
    V, K = len(centers), len(dataset)
    dirs = np.zeros((V, K, 3))
    dirs[..., 2] = 1.0
    colores = np.zeros((V, K, 3))
    visible = np.zeros((V, K), dtype=bool)

    for k, img in enumerate(dataset):
        cam = img.camera
        pix, dist, frente = project_points(cam, centers)
        col, dentro = sample_image_batch(img, pix)
        vis = frente & dentro & (dist > 0)
        visible[:, k] = vis
        colores[:, k] = col
        rel = cam.origin - centers
        dirs[vis, k] = rel[vis] / dist[vis, None]

    T = visible.astype(np.float64)
    if use_occlusion and np.any(visible):
        vi, ki = np.nonzero(visible)
        origenes = np.stack([img.camera.origin for img in dataset])
        T[vi, ki] = segment_transmittance(density, centers[vi], origenes[ki], render_cfg)
    return dirs, T, colores, visible


def gather_observations(v, density: DensityGrid, dataset: Sequence[PosedImage],
                        cfg: Optional[EstimatorConfig] = None) -> VoxelObservations:
    """
    Recolecta {d_k, T_k, c_k} de un punto en todas las cámaras.

    Las cámaras que no ven el punto (detrás o fuera de la imagen) quedan
    con visible=False y peso 0.
    """
    cfg = cfg or EstimatorConfig()
    centro = np.asarray(v, dtype=np.float64).reshape(1, 3)
    dirs, T, colores, visible = _gather_batch(centro, density, dataset, cfg.render, cfg.use_occlusion)
    return VoxelObservations(dirs[0], T[0], colores[0], visible[0])


def _estimate_batch(dirs: np.ndarray, T: np.ndarray, colores: np.ndarray, visible: np.ndarray,
                    pdf: DirectionPdf, degree: int, use_residual: bool = True,
                    rounds: int = 1, tolerance: float = 1e-6):
    """
    Núcleo vectorizado sobre V vóxeles.

    Retorna coeficientes (V, 3, n), máscara de estimados (V,),
    residuos finales (V, K, 3) y pesos efectivos (V, K).
    """
    W = np.where(visible, T, 0.0)
    total = W.sum(axis=-1)
    estimado = total > 0
    Y = eval_basis(degree, dirs, check=False)
    p = _pdf_matrix(pdf, dirs, visible)
    g = W / p / np.where(estimado, total, 1.0)[:, None]

    V, n = len(dirs), num_coeffs(degree)
    h = np.zeros((V, 3, n))
    if not use_residual:
        h = np.einsum('vk,vkc,vkn->vcn', g, colores, Y)
    else:
        pred = np.zeros_like(colores)
        for ronda in range(rounds):
            previo = h.copy()
            for j in range(n):
                Yj = Y[..., j]
                # residuo sin la componente j (en la primera ronda: sólo las anteriores)
                resid = colores - pred + h[:, None, :, j] * Yj[..., None]
                nuevo = np.einsum('vk,vkc->vc', g * Yj, resid)
                pred += (nuevo - h[:, :, j])[:, None, :] * Yj[..., None]
                h[:, :, j] = nuevo
            if ronda > 0 and np.max(np.abs(h - previo), initial=0.0) < tolerance:
                break

    h[~estimado] = 0.0
    residuo = colores - np.einsum('vcn,vkn->vkc', h, Y)
    residuo[~visible] = 0.0
    return h, estimado, residuo, W


def estimate_voxel_sh(obs: VoxelObservations, pdf: DirectionPdf, degree: int,
                      use_residual: bool = True, rounds: int = 1,
                      tolerance: float = 1e-6) -> VoxelEstimate:
    """
    Coeficientes SH de un vóxel a partir de sus observaciones.

    Parámetros:
    - obs: observaciones del vóxel
    - pdf: densidad de direcciones p(d)
    - degree: grado L
    - use_residual: esquema residual (False = Monte Carlo directo)
    - rounds: rondas de refinamiento (1 = una pasada en orden)

    Retorna:
    - VoxelEstimate; sin peso total (Σ T = 0) queda con coeficientes cero
      y estimated=False
    """
    dirs = np.asarray(obs.directions, dtype=np.float64)[None]
    T = np.asarray(obs.weights, dtype=np.float64)[None]
    colores = np.asarray(obs.colors, dtype=np.float64)[None]
    visible = np.asarray(obs.visible, dtype=bool)[None]
    if np.any(visible):
        check_unit(dirs[visible])
    h, estimado, residuo, W = _estimate_batch(dirs, T, colores, visible, pdf, degree,
                                              use_residual, rounds, tolerance)
    return VoxelEstimate(ShCoeffs(degree, h[0]), bool(estimado[0]),
                         ResidualColor(residuo[0], W[0]))


# ── Selección de vóxeles ───────────────────────────────────────────────────

@dataclass
class VoxelSet:
    """
    Conjunto de vóxeles a estimar.

    - all: todos
    - density: σ ≥ τ
    - occupied: σ > τ
    - rays: vóxeles que leen las muestras activas de un lote de rayos
    - indices: índices planos explícitos
    """

    kind: str
    tau: float = 0.0
    rays: Optional[RayBatch] = field(default=None, repr=False)
    indices: Optional[np.ndarray] = field(default=None, repr=False)
    dilate: int = 0

    @classmethod
    def all(cls) -> "VoxelSet":
        return cls("all")

    @classmethod
    def density_at_least(cls, tau: float, dilate: int = 0) -> "VoxelSet":
        return cls("density", tau=float(tau), dilate=dilate)

    @classmethod
    def occupied(cls, tau: float = 0.0, dilate: int = 0) -> "VoxelSet":
        return cls("occupied", tau=float(tau), dilate=dilate)

    @classmethod
    def ray_batch(cls, rays: RayBatch) -> "VoxelSet":
        return cls("rays", rays=rays)

    @classmethod
    def from_indices(cls, indices) -> "VoxelSet":
        return cls("indices", indices=np.asarray(indices, dtype=np.int64).reshape(-1))

    def resolve(self, density: DensityGrid, render_cfg: RenderConfig) -> np.ndarray:
        """Índices planos ordenados y únicos."""
        n = density.geometry.n_voxels
        if self.kind == "all":
            return np.arange(n)
        if self.kind == "indices":
            return np.unique(self.indices)
        if self.kind == "rays":
            return ray_batch_voxels(density, self.rays, render_cfg)
        if self.kind == "density":
            mask = density.values >= self.tau
        elif self.kind == "occupied":
            mask = density.values > self.tau
        else:
            raise ConfigurationError(f"Tipo de VoxelSet desconocido: {self.kind}")
        if self.dilate:
            mask = dilate_mask(mask, self.dilate)
        return np.flatnonzero(mask)


def ray_batch_voxels(density: DensityGrid, rays: Optional[RayBatch], cfg: RenderConfig) -> np.ndarray:
    """Vóxeles del stencil trilineal de las muestras activas de los rayos."""
    if rays is None or len(rays) == 0:
        return np.zeros(0, dtype=np.int64)
    partes = []
    for _, sub in iter_ray_chunks(density, rays, cfg):
        s = march(density, sub, cfg)
        usa = s.active[..., None] & (s.stencil_w > 0)
        partes.append(np.unique(s.stencil_idx[usa]))
    return np.unique(np.concatenate(partes)) if partes else np.zeros(0, dtype=np.int64)


# ── Estimación del campo completo ──────────────────────────────────────────

@dataclass
class ColorFieldEstimate:
    """
    Resultado de `estimate_color_field`.

    - grid: coeficientes estimados (cero fuera de la selección)
    - selected / estimated: máscaras (Nx, Ny, Nz)
    - mean_abs_residual: media ponderada de |c̃| por canal, (Nx, Ny, Nz, 3)
    - residual_sq: Σ_k T_k · mean_c(c̃²) por vóxel (plano)
    - weight_sum: Σ_k T_k por vóxel (plano)
    """

    grid: ShColorGrid
    selected: np.ndarray
    estimated: np.ndarray
    mean_abs_residual: np.ndarray = field(repr=False)
    residual_sq: np.ndarray = field(repr=False)
    weight_sum: np.ndarray = field(repr=False)

    @property
    def n_estimated(self) -> int:
        return int(np.sum(self.estimated))

    def to_dict(self) -> dict:
        return {
            'degree': self.grid.degree,
            'dims': list(self.grid.geometry.dims),
            'selected': int(np.sum(self.selected)),
            'estimated': self.n_estimated,
        }


def estimate_color_field(density: DensityGrid, dataset: Sequence[PosedImage], pdf: DirectionPdf,
                         degree: int, voxel_set: VoxelSet,
                         cfg: Optional[EstimatorConfig] = None) -> ColorFieldEstimate:
    """
    Estima de forma independiente cada vóxel seleccionado.

    Los vóxeles se procesan por bloques (opcionalmente en hilos); cada
    bloque escribe sólo sus propias filas de la salida.
    """
    cfg = cfg or EstimatorConfig(sh_degree=degree)
    geo = density.geometry
    n_vox, n = geo.n_voxels, num_coeffs(degree)
    K = len(dataset)

    coefs = np.zeros((n_vox, 3, n))
    estimado = np.zeros(n_vox, dtype=bool)
    seleccion = np.zeros(n_vox, dtype=bool)
    abs_res = np.zeros((n_vox, 3))
    sq_res = np.zeros(n_vox)
    pesos = np.zeros(n_vox)

    idx = voxel_set.resolve(density, cfg.render)
    seleccion[idx] = True

    bloque = cfg.voxel_chunk
    if pdf.kind == "mixture_vmf" and pdf.modes is None and K:
        bloque = max(1, min(bloque, _VMF_BUDGET // (K * K)))
    bloques: List[np.ndarray] = [idx[a:a + bloque] for a in range(0, len(idx), bloque)]

    def procesar(sel: np.ndarray) -> None:
        centros = geo.voxel_centers(sel)
        dirs, T, colores, visible = _gather_batch(centros, density, dataset, cfg.render,
                                                  cfg.use_occlusion)
        h, ok, res, W = _estimate_batch(dirs, T, colores, visible, pdf, degree,
                                        cfg.use_residual, cfg.rounds, cfg.tolerance)
        total = W.sum(axis=-1)
        coefs[sel] = h
        estimado[sel] = ok
        pesos[sel] = total
        sq_res[sel] = np.sum(W * np.mean(res ** 2, axis=-1), axis=-1)
        seguro = np.where(ok, total, 1.0)[:, None]
        abs_res[sel] = np.where(ok[:, None], np.einsum('vk,vkc->vc', W, np.abs(res)) / seguro, 0.0)

    if K and bloques:
        if cfg.threads > 1 and len(bloques) > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                list(pool.map(procesar, bloques))
        else:
            for sel in bloques:
                procesar(sel)

    logger.debug(f"Estimación CF: {len(idx)} vóxeles seleccionados, "
                 f"{int(estimado.sum())} estimados, {K} cámaras, grado {degree}")

    dims = geo.dims
    grid = ShColorGrid(geo, degree, coefs.reshape(dims + (3, n)))
    return ColorFieldEstimate(grid, seleccion.reshape(dims), estimado.reshape(dims),
                              abs_res.reshape(dims + (3,)), sq_res, pesos)
