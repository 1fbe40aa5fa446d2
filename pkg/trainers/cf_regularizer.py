# trainers/cf_regularizer.py
# Pérdida fotométrica, pérdida CF (color en forma cerrada) y sus gradientes

"""
Ambas pérdidas comparten `render_loss_and_grads`:

    L = (1/N) Σ_r ‖C_r − C_r^gt‖²

con el gradiente analítico de la cuadratura respecto de la densidad:

    ∂C/∂σ_i = δ_i · (T_{i+1} c_i − Σ_{j>i} w_j c_j)

esparcido a los vóxeles con los pesos trilineales. En la pérdida CF los
coeficientes estimados (y los pesos T_{v,k} usados para estimarlos) son
constantes durante el paso: el gradiente llega a la densidad sólo a través
de α_i y T_i del renderizado.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from extractors.cf_estimator import (DirectionPdf, EstimatorConfig, VoxelSet,
                                     estimate_color_field, ray_batch_voxels)
from generators.volume_renderer import (ColorSource, RenderConfig, iter_ray_chunks, march,
                                        sample_colors)
from utils.camera import PosedImage, RayBatch
from utils.errors import EmptyBatchError, ShapeMismatchError
from utils.field_grid import DensityGrid, ShColorGrid, scatter_to_voxels
from utils.sh_basis import eval_basis, num_coeffs


@dataclass
class LossGrads:
    loss: float
    grad_density: np.ndarray = field(repr=False)
    grad_color: Optional[np.ndarray] = field(default=None, repr=False)
    rgb: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class CfLossResult:
    loss: float
    grad_density: np.ndarray = field(repr=False)
    color: ShColorGrid = field(repr=False)
    n_estimated: int = 0


@dataclass
class CfCache:
    """Estimaciones reutilizables entre pasos (opción `cache_cf_estimates`)."""

    color: Optional[ShColorGrid] = None
    known: Optional[np.ndarray] = None


def _check_batch(rays: RayBatch, gt_pixels) -> np.ndarray:
    if len(rays) == 0:
        raise EmptyBatchError("Lote de rayos vacío")
    gt = np.asarray(gt_pixels, dtype=np.float64)
    if gt.shape != (len(rays), 3):
        raise ShapeMismatchError(f"gt_pixels {gt.shape} no coincide con {len(rays)} rayos")
    return gt


def render_loss_and_grads(density: DensityGrid, color_source: ColorSource, rays: RayBatch,
                          gt_pixels, cfg: Optional[RenderConfig] = None,
                          color_grads: bool = True) -> LossGrads:
    """
    Error cuadrático medio del lote y gradientes analíticos.

    Parámetros:
    - color_source: ShColorGrid o callback de color (el callback no recibe gradiente)
    - color_grads: calcular también el gradiente de los coeficientes SH

    Retorna:
    - LossGrads con grad_density (Nx, Ny, Nz) y grad_color (Nx, Ny, Nz, 3, n) o None
    """
    gt = _check_batch(rays, gt_pixels)
    cfg = cfg or RenderConfig()
    geo = density.geometry
    n_vox = geo.n_voxels
    N = len(rays)

    es_grilla = isinstance(color_source, ShColorGrid)
    calcular_color = color_grads and es_grilla
    g_sigma = np.zeros(n_vox)
    g_color = np.zeros((n_vox, 3 * num_coeffs(color_source.degree))) if calcular_color else None
    rgb = np.zeros((N, 3))

    for sl, sub in iter_ray_chunks(density, rays, cfg):
        s = march(density, sub, cfg)
        c = sample_colors(color_source, s, sub)
        wc = s.w[..., None] * c
        C = wc.sum(axis=1)
        rgb[sl] = C
        dC = 2.0 * (C - gt[sl]) / N                                    # (n, 3)

        # Σ_{j>i} w_j c_j
        posterior = C[:, None, :] - np.cumsum(wc, axis=1)
        dC_dtau = (s.T_after * s.active)[..., None] * c - posterior
        g_muestra = s.delta * np.einsum('nc,nsc->ns', dC, dC_dtau)
        g_sigma += scatter_to_voxels(n_vox, s.stencil_idx.reshape(-1, 8),
                                     s.stencil_w.reshape(-1, 8), g_muestra.reshape(-1))

        if calcular_color and np.any(s.active):
            act = s.active
            fila = np.nonzero(act)[0]
            base = eval_basis(color_source.degree, -sub.directions, check=False)
            por_muestra = (dC[fila][:, :, None] * base[fila][:, None, :]).reshape(len(fila), -1)
            por_muestra *= s.w[act][:, None]
            g_color += scatter_to_voxels(n_vox, s.stencil_idx[act], s.stencil_w[act], por_muestra)

    loss = float(np.mean(np.sum((rgb - gt) ** 2, axis=-1)))
    dims = geo.dims
    return LossGrads(
        loss=loss,
        grad_density=g_sigma.reshape(dims),
        grad_color=None if g_color is None else g_color.reshape(dims + (3, -1)),
        rgb=rgb,
    )


def photometric_loss(density: DensityGrid, color_grid: ShColorGrid, rays: RayBatch,
                     gt_pixels, cfg: Optional[RenderConfig] = None) -> LossGrads:
    """Pérdida fotométrica con gradientes de densidad y de color."""
    return render_loss_and_grads(density, color_grid, rays, gt_pixels, cfg, color_grads=True)


def cf_loss(density: DensityGrid, dataset: Sequence[PosedImage], rays: RayBatch, gt_pixels,
            pdf: DirectionPdf, degree: int, cfg: Optional[EstimatorConfig] = None,
            cache: Optional[CfCache] = None) -> CfLossResult:
    """
    Pérdida CF de un lote de rayos.

    1. vóxeles que leen las muestras de los rayos
    2. estimación en forma cerrada de su color
    3. renderizado con ese color congelado
    4. error cuadrático medio y gradiente sólo de la densidad
    """
    gt = _check_batch(rays, gt_pixels)
    cfg = cfg or EstimatorConfig(sh_degree=degree)

    necesarios = ray_batch_voxels(density, rays, cfg.render)
    if cache is not None and cache.color is not None and cache.color.degree == degree:
        nuevos = necesarios[~cache.known[necesarios]]
    else:
        nuevos = necesarios

    est = estimate_color_field(density, dataset, pdf, degree, VoxelSet.from_indices(nuevos), cfg)
    color = est.grid
    if cache is not None:
        if cache.color is not None and cache.color.degree == degree:
            coefs = cache.color.coeffs.copy()
            plano = coefs.reshape(len(cache.known), 3, -1)
            plano[nuevos] = est.grid.flat.reshape(-1, 3, plano.shape[-1])[nuevos]
            color = ShColorGrid(density.geometry, degree, coefs)
            known = cache.known.copy()
        else:
            known = np.zeros(density.geometry.n_voxels, dtype=bool)
        known[nuevos] = True
        cache.color, cache.known = color, known

    res = render_loss_and_grads(density, color, rays, gt, cfg.render, color_grads=False)
    return CfLossResult(res.loss, res.grad_density, color, est.n_estimated)
