# utils/camera.py
# Cámara pinhole, rayos, proyección y muestreo bilineal de imágenes

"""
Convenciones:
- Marco de cámara OpenCV: x a la derecha, y hacia abajo, z hacia adelante.
- El píxel (columna i, fila j) tiene su centro en (i + 0.5, j + 0.5).
- `cam_to_world` es 3×4: [R | o], con R ortonormal (det +1) y o el origen.
- Las direcciones de observación d_k apuntan del punto hacia la cámara,
  es decir, son la negación de la dirección del rayo de vista.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from utils.errors import ConfigurationError, OutOfBoundsError, ShapeMismatchError
from utils.sh_basis import check_unit, fibonacci_sphere

ORTHO_TOL = 1e-6


@dataclass
class Camera:
    """Intrínsecos pinhole + pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    cam_to_world: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.cam_to_world = np.asarray(self.cam_to_world, dtype=np.float64).reshape(3, 4)
        self.width = int(self.width)
        self.height = int(self.height)
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError(f"Focales inválidas: fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError(f"Resolución inválida: {self.width}×{self.height}")
        R = self.rotation
        if not np.allclose(R.T @ R, np.eye(3), atol=ORTHO_TOL) or np.linalg.det(R) <= 0:
            raise ConfigurationError("La rotación de cam_to_world no es ortonormal con det +1")

    @property
    def rotation(self) -> np.ndarray:
        return self.cam_to_world[:, :3]

    @property
    def origin(self) -> np.ndarray:
        return self.cam_to_world[:, 3]

    @property
    def forward(self) -> np.ndarray:
        return self.cam_to_world[:, 2]

    def to_dict(self) -> Dict:
        return {
            'fx': float(self.fx), 'fy': float(self.fy),
            'cx': float(self.cx), 'cy': float(self.cy),
            'width': self.width, 'height': self.height,
            'cam_to_world': [float(x) for x in self.cam_to_world.reshape(-1)],
        }

    @classmethod
    def from_dict(cls, datos: Dict) -> "Camera":
        try:
            return cls(float(datos['fx']), float(datos['fy']),
                       float(datos['cx']), float(datos['cy']),
                       int(datos['width']), int(datos['height']),
                       np.asarray(datos['cam_to_world'], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"Cámara mal formada: {e}") from e


@dataclass
class Ray:
    """r(t) = o + t·d para t en [t_near, t_far]."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float = 0.0
    t_far: float = 1.0

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = check_unit(np.asarray(self.direction, dtype=np.float64).reshape(3))
        # t_near == t_far es un rayo vacío (no cruza la caja de la escena)
        if self.t_near < 0 or self.t_far < self.t_near:
            raise ConfigurationError(f"Intervalo inválido [{self.t_near}, {self.t_far}]")

    def point_at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass
class RayBatch:
    """Lote vectorizado de rayos: arrays (N, 3) y (N,)."""

    origins: np.ndarray
    directions: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray

    def __post_init__(self):
        self.origins = np.asarray(self.origins, dtype=np.float64).reshape(-1, 3)
        self.directions = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        n = len(self.origins)
        self.t_near = np.broadcast_to(np.asarray(self.t_near, dtype=np.float64), (n,)).copy()
        self.t_far = np.broadcast_to(np.asarray(self.t_far, dtype=np.float64), (n,)).copy()
        if len(self.directions) != n:
            raise ShapeMismatchError("origins y directions deben tener la misma cantidad de filas")

    def __len__(self) -> int:
        return len(self.origins)

    @classmethod
    def empty(cls) -> "RayBatch":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros(0))

    @classmethod
    def from_rays(cls, rays: List[Ray]) -> "RayBatch":
        if not rays:
            return cls.empty()
        return cls(np.stack([r.origin for r in rays]),
                   np.stack([r.direction for r in rays]),
                   np.array([r.t_near for r in rays]),
                   np.array([r.t_far for r in rays]))

    def ray(self, i: int) -> Ray:
        return Ray(self.origins[i], self.directions[i], float(self.t_near[i]), float(self.t_far[i]))

    def subset(self, idx) -> "RayBatch":
        return RayBatch(self.origins[idx], self.directions[idx], self.t_near[idx], self.t_far[idx])

    @staticmethod
    def concat(lotes: List["RayBatch"]) -> "RayBatch":
        lotes = [b for b in lotes if len(b)]
        if not lotes:
            return RayBatch.empty()
        return RayBatch(np.concatenate([b.origins for b in lotes]),
                        np.concatenate([b.directions for b in lotes]),
                        np.concatenate([b.t_near for b in lotes]),
                        np.concatenate([b.t_far for b in lotes]))


@dataclass
class PosedImage:
    """Imagen RGB en [0, 1] con su cámara."""

    camera: Camera
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        esperado = (self.camera.height, self.camera.width, 3)
        if self.pixels.shape != esperado:
            raise ShapeMismatchError(f"Imagen {self.pixels.shape} no coincide con la cámara {esperado}")


@dataclass(frozen=True)
class Projection:
    pixel: np.ndarray
    depth: float


def intersect_bbox(origins, directions, bbox_min, bbox_max) -> Tuple[np.ndarray, np.ndarray]:
    """
    Intersección por slabs con una caja alineada a los ejes.

    Retorna (t_min, t_max) por rayo; sin intersección ⇒ t_max < t_min.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    with np.errstate(divide='ignore', invalid='ignore'):
        inv = 1.0 / d
        t0 = (np.asarray(bbox_min) - o) * inv
        t1 = (np.asarray(bbox_max) - o) * inv
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # eje paralelo: dentro del slab ⇒ (-inf, inf), fuera ⇒ vacío
    paralelo = d == 0
    dentro = (o >= bbox_min) & (o <= bbox_max)
    lo = np.where(paralelo, np.where(dentro, -np.inf, np.inf), lo)
    hi = np.where(paralelo, np.where(dentro, np.inf, -np.inf), hi)
    return np.max(lo, axis=-1), np.min(hi, axis=-1)


def clip_to_bounds(origins, directions, near, far, bounds=None) -> Tuple[np.ndarray, np.ndarray]:
    """Recorta [near, far] a la caja; los rayos que no la cruzan quedan vacíos (t_near = t_far)."""
    n = len(np.atleast_2d(origins))
    t_near = np.full(n, float(near))
    t_far = np.full(n, float(far))
    if bounds is not None:
        t0, t1 = intersect_bbox(origins, directions, bounds.bbox_min, bounds.bbox_max)
        t_near = np.maximum(t_near, t0)
        t_far = np.minimum(t_far, t1)
        vacio = t_far <= t_near
        t_near = np.where(vacio, near, t_near)
        t_far = np.where(vacio, near, t_far)
    return t_near, t_far


def pixel_directions(camera: Camera, px) -> np.ndarray:
    """Direcciones de vista unitarias (mundo) por las coordenadas de píxel (..., 2)."""
    px = np.asarray(px, dtype=np.float64)
    d_cam = np.stack([(px[..., 0] - camera.cx) / camera.fx,
                      (px[..., 1] - camera.cy) / camera.fy,
                      np.ones(px.shape[:-1])], axis=-1)
    d = d_cam @ camera.rotation.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def generate_ray(camera: Camera, px, bounds=None, near: float = 0.0, far: float = 100.0) -> Ray:
    """
    Rayo a través de las coordenadas de píxel px = (u, v).

    Parámetros:
    - px: coordenadas continuas; el centro del píxel (i, j) es (i + 0.5, j + 0.5)
    - bounds: GridGeometry de la escena; recorta [near, far] a la caja

    Errores:
    - OutOfBoundsError si px cae fuera de [0, width] × [0, height]
    """
    px = np.asarray(px, dtype=np.float64).reshape(2)
    if not (0.0 <= px[0] <= camera.width and 0.0 <= px[1] <= camera.height):
        raise OutOfBoundsError(f"Píxel fuera de la imagen: {tuple(px)}",
                               {'width': camera.width, 'height': camera.height})
    d = pixel_directions(camera, px)
    t_near, t_far = clip_to_bounds(camera.origin[None], d[None], near, far, bounds)
    return Ray(camera.origin, d, float(t_near[0]), float(t_far[0]))


def pixel_rays(camera: Camera, px, bounds=None, near: float = 0.0, far: float = 100.0) -> RayBatch:
    """Versión por lotes de generate_ray para px (N, 2)."""
    px = np.asarray(px, dtype=np.float64).reshape(-1, 2)
    d = pixel_directions(camera, px)
    o = np.broadcast_to(camera.origin, d.shape)
    t_near, t_far = clip_to_bounds(o, d, near, far, bounds)
    return RayBatch(o, d, t_near, t_far)


def pixel_centers(camera: Camera) -> np.ndarray:
    """Centros de todos los píxeles en orden de filas: índice = j·W + i."""
    jj, ii = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing='ij')
    return np.stack([ii + 0.5, jj + 0.5], axis=-1).reshape(-1, 2)


def camera_rays(camera: Camera, bounds=None, near: float = 0.0, far: float = 100.0) -> RayBatch:
    return pixel_rays(camera, pixel_centers(camera), bounds, near, far)


def project(camera: Camera, v) -> Optional[Projection]:
    """
    Proyección perspectiva de un punto de mundo.

    Retorna Projection(pixel, depth) con depth la distancia euclídea a la
    cámara, o None si el punto está detrás del plano de imagen.
    """
    pix, depth, frente = project_points(camera, np.asarray(v, dtype=np.float64).reshape(1, 3))
    if not frente[0]:
        return None
    return Projection(pix[0], float(depth[0]))


def project_points(camera: Camera, points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Versión por lotes de `project`.

    Retorna:
    - pixel: (N, 2) (sin sentido donde `in_front` es False)
    - depth: (N,) distancia euclídea
    - in_front: (N,) bool
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rel = p - camera.origin
    p_cam = rel @ camera.rotation
    z = p_cam[:, 2]
    frente = z > 1e-12
    z_seguro = np.where(frente, z, 1.0)
    pix = np.stack([camera.fx * p_cam[:, 0] / z_seguro + camera.cx,
                    camera.fy * p_cam[:, 1] / z_seguro + camera.cy], axis=-1)
    return pix, np.linalg.norm(rel, axis=-1), frente


def sample_image(image, px) -> Optional[np.ndarray]:
    """
    Color bilineal en coordenadas de píxel continuas.

    Retorna None (fuera de vista) si px cae fuera de [0, W] × [0, H].
    """
    colores, valido = sample_image_batch(image, np.asarray(px, dtype=np.float64).reshape(1, 2))
    return colores[0] if valido[0] else None


def sample_image_batch(image, px) -> Tuple[np.ndarray, np.ndarray]:
    """
    Muestreo bilineal vectorizado.

    Parámetros:
    - image: PosedImage o array (H, W, 3)
    - px: (N, 2) coordenadas (u, v)

    Retorna:
    - colores (N, 3) (cero donde no es válido)
    - valido (N,) bool
    """
    pixels = image.pixels if isinstance(image, PosedImage) else np.asarray(image, dtype=np.float64)
    H, W = pixels.shape[:2]
    px = np.asarray(px, dtype=np.float64).reshape(-1, 2)
    valido = ((px[:, 0] >= 0) & (px[:, 0] <= W) & (px[:, 1] >= 0) & (px[:, 1] <= H)
              & np.all(np.isfinite(px), axis=-1))

    x = np.clip(np.nan_to_num(px[:, 0]) - 0.5, 0.0, W - 1)
    y = np.clip(np.nan_to_num(px[:, 1]) - 0.5, 0.0, H - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]

    colores = ((1 - fx) * (1 - fy) * pixels[y0, x0] + fx * (1 - fy) * pixels[y0, x1]
               + (1 - fx) * fy * pixels[y1, x0] + fx * fy * pixels[y1, x1])
    colores[~valido] = 0.0
    return colores, valido


def look_at(origin, target, up=None) -> np.ndarray:
    """
    Matriz cam_to_world (3×4) de una cámara en `origin` mirando a `target`.

    El "arriba" de la imagen sigue a `up` (z de mundo por defecto; y si la
    vista es casi paralela a z).
    """
    origin = np.asarray(origin, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - origin
    norma = np.linalg.norm(f)
    if norma == 0:
        raise ConfigurationError("look_at: origen y objetivo coinciden")
    f = f / norma
    up = np.array([0.0, 0.0, 1.0]) if up is None else np.asarray(up, dtype=np.float64)
    if abs(np.dot(f, up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(f, up)
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return np.concatenate([np.stack([right, down, f], axis=1), origin[:, None]], axis=1)


def intrinsics_from_fov(width: int, height: int, fov_deg: float) -> Tuple[float, float, float, float]:
    """(fx, fy, cx, cy) para un campo de visión horizontal en grados."""
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
    return f, f, width / 2.0, height / 2.0


def orbit_cameras(count: int, layout: str, radius: float, center, width: int, height: int,
                  fov_deg: float, seed: int = 0) -> List[Camera]:
    """
    Cámaras sobre una retícula de Fibonacci (esfera u hemisferio superior)
    mirando al centro.

    Todo es relativo a `center`: |origen − center| = radius y, en el
    hemisferio, z_origen ≥ z_center. El desfase azimutal de la retícula
    sale de la semilla.
    """
    if layout not in ('sphere', 'hemisphere'):
        raise ConfigurationError(f"Layout de cámaras desconocido: {layout}")
    rng = np.random.default_rng(seed)
    offset = float(rng.uniform(0.0, 2.0 * np.pi))
    dirs = fibonacci_sphere(count, hemisphere=(layout == 'hemisphere'), offset=offset)
    center = np.asarray(center, dtype=np.float64)
    fx, fy, cx, cy = intrinsics_from_fov(width, height, fov_deg)
    return [Camera(fx, fy, cx, cy, width, height, look_at(center + radius * d, center))
            for d in dirs]
