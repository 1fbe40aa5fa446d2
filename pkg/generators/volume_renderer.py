# generators/volume_renderer.py
# Renderizado volumétrico discreto (cuadratura de punto medio), profundidad
# y transmitancia a lo largo de segmentos arbitrarios

"""
Cuadratura:
- Segmentos uniformes de longitud δ desde t_near; el último se recorta a t_far.
- Densidad y color constantes por segmento, evaluados en el punto medio.
- α_i = 1 − exp(−σ_i δ_i), T_i = exp(−Σ_{j<i} σ_j δ_j), w_i = T_i − T_{i+1}.
  Con esa forma Σ w_i = 1 − T_final se cumple por telescopía.
- Muestras con T_i < ε_T quedan inactivas (corte temprano).
- Fondo negro: no hay término de fondo.

Las fuentes de color se consultan con la dirección que apunta hacia la
cámara (la negación de la dirección del rayo).
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from utils.camera import Camera, Ray, RayBatch, camera_rays, intersect_bbox
from utils.field_grid import DensityGrid, GridGeometry, ShColorGrid
from utils.sh_basis import eval_basis, num_coeffs

ColorFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
ColorSource = Union[ShColorGrid, ColorFn]

DEPTH_MIN_WEIGHT = 1e-6


class RenderConfig(BaseModel):
    """
    Parámetros de la cuadratura.

    step_size=None usa el semiancho de vóxel δ_v de la grilla.
    """

    model_config = ConfigDict(extra='forbid')

    step_size: Optional[float] = Field(default=None, gt=0)
    t_near: float = Field(default=0.0, ge=0)
    t_far: float = Field(default=100.0, gt=0)
    eps_t: float = Field(default=1e-6, ge=0, lt=1)
    dead_zone_scale: float = Field(default=1.0, ge=0)
    chunk_samples: int = Field(default=262144, ge=1024)

    def step_for(self, geometry: GridGeometry) -> float:
        return float(self.step_size) if self.step_size is not None else geometry.half_width


@dataclass
class RaySample:
    t: float
    sigma: float
    delta: float
    alpha: float
    T: float
    w: float


@dataclass
class RaySamples:
    """
    Muestras de un lote de rayos en disposición rectangular (N, S).

    Las posiciones con `valid` False son relleno (δ = 0).
    """

    t: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray
    T: np.ndarray
    T_after: np.ndarray
    w: np.ndarray
    valid: np.ndarray
    active: np.ndarray
    points: np.ndarray = field(repr=False)
    stencil_idx: np.ndarray = field(repr=False)
    stencil_w: np.ndarray = field(repr=False)
    T_final: np.ndarray = field(repr=False)

    @property
    def n_rays(self) -> int:
        return self.t.shape[0]

    def for_ray(self, i: int) -> List[RaySample]:
        """Muestras activas del rayo i, en orden."""
        sel = np.nonzero(self.active[i])[0]
        return [RaySample(float(self.t[i, s]), float(self.sigma[i, s]), float(self.delta[i, s]),
                          float(self.alpha[i, s]), float(self.T[i, s]), float(self.w[i, s]))
                for s in sel]


@dataclass
class RenderResult:
    rgb: np.ndarray
    depth: np.ndarray
    transmittance: np.ndarray
    weight_sum: np.ndarray


@dataclass
class RenderedView:
    rgb: np.ndarray
    depth: np.ndarray
    transmittance: np.ndarray


def _layout(rays: RayBatch, step: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Puntos medios, longitudes de segmento y máscara de validez (N, S)."""
    largo = np.maximum(rays.t_far - rays.t_near, 0.0)
    cuenta = np.ceil(largo / step - 1e-9).astype(np.int64)
    cuenta = np.maximum(cuenta, 0)
    S = int(cuenta.max()) if len(cuenta) else 0
    k = np.arange(S, dtype=np.float64)
    inicio = rays.t_near[:, None] + k * step
    fin = np.minimum(inicio + step, rays.t_far[:, None])
    valid = np.arange(S) < cuenta[:, None]
    delta = np.where(valid, fin - inicio, 0.0)
    t = np.where(valid, 0.5 * (inicio + fin), rays.t_near[:, None])
    return t, delta, valid


def _rays_per_chunk(rays: RayBatch, step: float, chunk_samples: int) -> int:
    if len(rays) == 0:
        return 1
    s_max = int(np.ceil(np.max(rays.t_far - rays.t_near) / step)) + 1
    return max(1, chunk_samples // max(s_max, 1))


def iter_ray_chunks(density: DensityGrid, rays: RayBatch, cfg: RenderConfig):
    """Genera (slice, sub-lote) con a lo sumo ~chunk_samples muestras por bloque."""
    bloque = _rays_per_chunk(rays, cfg.step_for(density.geometry), cfg.chunk_samples)
    for a in range(0, len(rays), bloque):
        sl = slice(a, a + bloque)
        yield sl, rays.subset(sl)


def march(density: DensityGrid, rays: RayBatch, cfg: RenderConfig) -> RaySamples:
    """
    Recorre los rayos y devuelve todas las cantidades por muestra.

    No divide en bloques: los llamadores que renderizan lotes grandes
    usan `render_rays`.
    """
    step = cfg.step_for(density.geometry)
    t, delta, valid = _layout(rays, step)
    points = rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]

    idx, wts = density.geometry.trilinear_stencil(points)
    sigma = np.sum(density.values.reshape(-1)[idx] * wts, axis=-1)
    sigma = np.where(valid, sigma, 0.0)

    tau = sigma * delta
    incl = np.cumsum(tau, axis=-1)
    excl = np.zeros_like(incl)
    excl[:, 1:] = incl[:, :-1]
    T = np.exp(-excl)
    T_after = np.exp(-incl)
    alpha = -np.expm1(-tau)

    active = valid & (T >= cfg.eps_t)
    w = np.where(active, T - T_after, 0.0)

    # T tras la última muestra activa (activas forman un prefijo)
    n_activas = active.sum(axis=-1)
    ultima = np.maximum(n_activas - 1, 0)
    if T_after.shape[-1]:
        T_final = np.where(n_activas > 0, T_after[np.arange(len(rays)), ultima], 1.0)
    else:
        T_final = np.ones(len(rays))

    return RaySamples(t=t, delta=delta, sigma=sigma, alpha=alpha, T=T, T_after=T_after, w=w,
                      valid=valid, active=active, points=points, stencil_idx=idx,
                      stencil_w=wts, T_final=T_final)


def sample_colors(color_source: ColorSource, samples: RaySamples, rays: RayBatch) -> np.ndarray:
    """
    Color emitido en cada muestra activa (N, S, 3); cero en las inactivas.
    """
    colores = np.zeros(samples.t.shape + (3,))
    act = samples.active
    if not np.any(act):
        return colores
    fila = np.nonzero(act)[0]
    vista = -rays.directions

    if isinstance(color_source, ShColorGrid):
        n = num_coeffs(color_source.degree)
        base = eval_basis(color_source.degree, vista, check=False)          # (N, n)
        datos = color_source.flat[samples.stencil_idx[act]]                  # (M, 8, 3n)
        coefs = np.einsum('mk,mkc->mc', samples.stencil_w[act], datos).reshape(-1, 3, n)
        colores[act] = np.einsum('mcn,mn->mc', coefs, base[fila])
    else:
        colores[act] = np.asarray(color_source(samples.points[act], vista[fila]), dtype=np.float64)
    return colores


def render_rays(density: DensityGrid, color_source: Optional[ColorSource], rays: RayBatch,
                cfg: RenderConfig, background_depth: Optional[float] = None) -> RenderResult:
    """
    Renderiza un lote de rayos por bloques de `cfg.chunk_samples` muestras.

    Parámetros:
    - color_source: ShColorGrid, callback (puntos, direcciones) → rgb, o None (sólo profundidad)
    - background_depth: profundidad de los rayos vacíos (None = t_far de cada rayo)
    """
    n = len(rays)
    rgb = np.zeros((n, 3))
    depth = np.zeros(n)
    trans = np.ones(n)
    wsum = np.zeros(n)
    if n == 0:
        return RenderResult(rgb, depth, trans, wsum)

    for sl, sub in iter_ray_chunks(density, rays, cfg):
        s = march(density, sub, cfg)
        if color_source is not None:
            c = sample_colors(color_source, s, sub)
            rgb[sl] = np.sum(s.w[..., None] * c, axis=1)
        suma = s.w.sum(axis=1)
        fondo = sub.t_far if background_depth is None else np.full(len(sub), background_depth)
        con_peso = suma >= DEPTH_MIN_WEIGHT
        prof = np.sum(s.w * s.t, axis=1) / np.where(con_peso, suma, 1.0)
        depth[sl] = np.where(con_peso, prof, fondo)
        trans[sl] = s.T_final
        wsum[sl] = suma
    return RenderResult(rgb, depth, trans, wsum)


def render_ray(density: DensityGrid, color_source: ColorSource, ray: Ray,
               cfg: RenderConfig) -> Tuple[np.ndarray, float]:
    """Color de un rayo y transmitancia final."""
    res = render_rays(density, color_source, RayBatch.from_rays([ray]), cfg)
    return res.rgb[0], float(res.transmittance[0])


def render_depth(density: DensityGrid, ray: Ray, cfg: RenderConfig) -> float:
    """Profundidad esperada Σ w t / Σ w; t_far si Σ w < 1e-6."""
    res = render_rays(density, None, RayBatch.from_rays([ray]), cfg)
    return float(res.depth[0])


def render_image(density: DensityGrid, color_source: Optional[ColorSource], camera: Camera,
                 cfg: RenderConfig) -> RenderedView:
    """
    Renderiza una vista completa.

    Los píxeles sin superficie reciben profundidad cfg.t_far.
    """
    rays = camera_rays(camera, density.geometry, cfg.t_near, cfg.t_far)
    res = render_rays(density, color_source, rays, cfg, background_depth=cfg.t_far)
    H, W = camera.height, camera.width
    return RenderedView(res.rgb.reshape(H, W, 3), res.depth.reshape(H, W),
                        res.transmittance.reshape(H, W))


def render_view(density: DensityGrid, color_source: ColorSource, camera: Camera,
                cfg: RenderConfig) -> np.ndarray:
    """Imagen RGB recortada a [0, 1], lista para comparar o guardar."""
    return np.clip(render_image(density, color_source, camera, cfg).rgb, 0.0, 1.0)


# ── Transmitancia entre puntos ─────────────────────────────────────────────

def _optical_depth(density: DensityGrid, rays: RayBatch, cfg: RenderConfig) -> np.ndarray:
    """Σ σ δ por rayo (sin corte temprano)."""
    out = np.zeros(len(rays))
    if len(rays) == 0:
        return out
    step = cfg.step_for(density.geometry)
    plano = density.values.reshape(-1)
    for sl, sub in iter_ray_chunks(density, rays, cfg):
        t, delta, valid = _layout(sub, step)
        pts = sub.origins[:, None, :] + t[..., None] * sub.directions[:, None, :]
        idx, wts = density.geometry.trilinear_stencil(pts)
        sigma = np.sum(plano[idx] * wts, axis=-1)
        out[sl] = np.sum(np.where(valid, sigma * delta, 0.0), axis=-1)
    return out


def segment_transmittance(density: DensityGrid, starts, ends, cfg: RenderConfig) -> np.ndarray:
    """
    Transmitancia exp(−∫σ) sobre segmentos start → end, por lotes.

    Se excluye una zona muerta de `dead_zone_scale · δ_v` alrededor de
    `start` para que un vóxel no se ocluya a sí mismo. Sólo se integra
    la parte del segmento dentro de la caja (afuera σ = 0).
    """
    starts = np.asarray(starts, dtype=np.float64).reshape(-1, 3)
    ends = np.asarray(ends, dtype=np.float64).reshape(-1, 3)
    vec = ends - starts
    largo = np.linalg.norm(vec, axis=-1)
    nulo = largo <= 0
    d = np.where(nulo[:, None], np.array([1.0, 0.0, 0.0]), vec / np.where(nulo, 1.0, largo)[:, None])

    geo = density.geometry
    zona = cfg.dead_zone_scale * geo.half_width
    t0, t1 = intersect_bbox(starts, d, geo.bbox_min, geo.bbox_max)
    tn = np.maximum(zona, t0)
    tf = np.minimum(largo, t1)
    vacio = nulo | (tf <= tn)
    tn = np.where(vacio, 0.0, tn)
    tf = np.where(vacio, 0.0, tf)

    return np.exp(-_optical_depth(density, RayBatch(starts, d, tn, tf), cfg))


def transmittance_to_camera(density: DensityGrid, v, o_k, cfg: RenderConfig) -> float:
    """T_{v,k}: transmitancia del punto v hacia el centro óptico o_k."""
    return float(segment_transmittance(density, np.reshape(v, (1, 3)),
                                       np.reshape(o_k, (1, 3)), cfg)[0])


def transmittance_to_cameras(density: DensityGrid, points, origins, cfg: RenderConfig) -> np.ndarray:
    """Matriz (V, K) de transmitancias de cada punto a cada cámara."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    V, K = len(points), len(origins)
    starts = np.repeat(points, K, axis=0)
    ends = np.tile(origins, (V, 1))
    return segment_transmittance(density, starts, ends, cfg).reshape(V, K)
