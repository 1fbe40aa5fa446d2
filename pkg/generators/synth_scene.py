# generators/synth_scene.py
# Escenas sintéticas de referencia: rasterizado de primitivas + vistas renderizadas

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from loguru import logger

from generators.volume_renderer import render_image
from parsers.scene_spec import Primitive, SceneSpec
from utils.camera import Camera, PosedImage, orbit_cameras
from utils.errors import ConfigurationError
from utils.field_grid import DensityGrid, GridGeometry, ShColorGrid, max_filter3
from utils.sh_basis import C0, num_coeffs


@dataclass
class SynthScene:
    """Campos de verdad de terreno, cámaras y vistas renderizadas."""

    spec: SceneSpec = field(repr=False)
    density: DensityGrid = field(repr=False)
    color: ShColorGrid = field(repr=False)
    cameras: List[Camera] = field(repr=False)
    images: List[np.ndarray] = field(repr=False)
    depths: List[np.ndarray] = field(repr=False)

    @property
    def dataset(self) -> List[PosedImage]:
        return [PosedImage(cam, img) for cam, img in zip(self.cameras, self.images)]

    def to_dict(self) -> dict:
        return {
            'name': self.spec.name,
            'dims': list(self.density.dims),
            'sh_degree': self.color.degree,
            'primitives': len(self.spec.primitives),
            'cameras': len(self.cameras),
            'occupied_voxels': int(np.sum(self.density.values > 0)),
        }


def primitive_mask(p: Primitive, points: np.ndarray) -> np.ndarray:
    c = np.asarray(p.center)
    if p.kind == 'sphere':
        return np.linalg.norm(points - c, axis=-1) <= p.radius
    medio = np.asarray(p.size) / 2.0
    return np.all(np.abs(points - c) <= medio, axis=-1)


def primitive_coeffs(p: Primitive, degree: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Coeficientes (3, n) de la primitiva y los del segundo color del tablero.

    Ambos comparten los términos l ≥ 1.
    """
    n = num_coeffs(degree)
    base = np.zeros((3, n))
    if p.sh is not None:
        sh = np.asarray(p.sh, dtype=np.float64)
        if sh.shape[1] > n or np.sqrt(sh.shape[1]) % 1:
            raise ConfigurationError(f"`sh` con {sh.shape[1]} coeficientes no es válido para grado {degree}")
        base[:, :sh.shape[1]] = sh
    else:
        base[:, 0] = np.asarray(p.color) / C0
    if p.view_dependence > 0 and n > 1:
        base[:, 1:] += rng.normal(0.0, p.view_dependence, size=(3, n - 1))
    segundo = base.copy()
    if p.checker is not None:
        segundo[:, 0] = np.asarray(p.checker.color2) / C0
    return base, segundo


def _checker_parity(p: Primitive, points: np.ndarray) -> np.ndarray:
    celdas = np.floor(points / p.checker.period).astype(np.int64)
    return (celdas.sum(axis=-1) % 2) == 1


def rasterize(spec: SceneSpec) -> Tuple[DensityGrid, ShColorGrid]:
    """
    Densidad y color de verdad de terreno en los centros de vóxel.

    Las primitivas posteriores pisan a las anteriores. El color se extiende
    un vóxel alrededor de cada primitiva para que la interpolación en la
    superficie no se apague hacia negro.
    """
    geo = GridGeometry(spec.dims, spec.bbox_min, spec.bbox_max)
    centros = geo.voxel_centers()
    sigma = np.zeros(geo.n_voxels)
    etiqueta = np.zeros(geo.n_voxels, dtype=np.int64)
    for i, p in enumerate(spec.primitives):
        dentro = primitive_mask(p, centros)
        sigma[dentro] = p.density
        etiqueta[dentro] = i + 1 if p.density > 0 else 0

    etiqueta = etiqueta.reshape(geo.dims)
    vecinos = max_filter3(etiqueta, fill=0)
    etiqueta = np.where(etiqueta == 0, vecinos, etiqueta).reshape(-1)

    n = num_coeffs(spec.sh_degree)
    coefs = np.zeros((geo.n_voxels, 3, n))
    for i, p in enumerate(spec.primitives):
        sel = etiqueta == i + 1
        if not np.any(sel):
            continue
        base, segundo = primitive_coeffs(p, spec.sh_degree, np.random.default_rng([spec.seed, i]))
        coefs[sel] = base
        if p.checker is not None:
            impar = sel & _checker_parity(p, centros)
            coefs[impar] = segundo

    density = DensityGrid(geo, sigma.reshape(geo.dims))
    color = ShColorGrid(geo, spec.sh_degree, coefs.reshape(geo.dims + (3, n)))
    return density, color


def scene_cameras(spec: SceneSpec) -> List[Camera]:
    cam = spec.cameras
    centro = cam.center if cam.center is not None else tuple(
        (np.asarray(spec.bbox_min) + np.asarray(spec.bbox_max)) / 2.0)
    return orbit_cameras(cam.count, cam.layout, cam.radius, centro, cam.width, cam.height,
                         cam.fov_deg, seed=spec.seed)


def synth_scene(spec: SceneSpec) -> SynthScene:
    """
    Genera la escena: rasteriza las primitivas y renderiza cada cámara con
    el renderizador volumétrico (imágenes recortadas a [0, 1]).

    Determinista para una semilla dada.
    """
    density, color = rasterize(spec)
    cameras = scene_cameras(spec)
    imagenes, profundidades = [], []
    for cam in cameras:
        vista = render_image(density, color, cam, spec.render)
        imagenes.append(np.clip(vista.rgb, 0.0, 1.0))
        profundidades.append(vista.depth)
    logger.info(f"Escena '{spec.name}': {int(np.sum(density.values > 0))} vóxeles ocupados, "
                f"{len(cameras)} cámaras ({spec.cameras.layout})")
    return SynthScene(spec, density, color, cameras, imagenes, profundidades)
