# utils/field_grid.py
# Grillas de vóxeles: densidad σ y coeficientes SH, con interpolación trilineal

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from utils.errors import ConfigurationError
from utils.sh_basis import ShCoeffs, check_degree, num_coeffs

# Offsets de las 8 esquinas (orden x, y, z como en tc_plenoxel)
_ESQUINAS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64)


@dataclass
class GridGeometry:
    """Dimensiones y caja envolvente compartidas por ambas grillas."""

    dims: Tuple[int, int, int]
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        if len(self.dims) != 3 or min(self.dims) <= 0:
            raise ConfigurationError(f"Dimensiones inválidas: {self.dims}")
        if not np.all(self.bbox_max > self.bbox_min):
            raise ConfigurationError("bbox_max debe ser mayor que bbox_min en cada eje")

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.bbox_max - self.bbox_min) / np.asarray(self.dims, dtype=np.float64)

    @property
    def half_width(self) -> float:
        """δ_v: semiancho del vóxel (el menor de los tres ejes)."""
        return float(np.min(self.voxel_size) / 2.0)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def center(self) -> np.ndarray:
        return (self.bbox_min + self.bbox_max) / 2.0

    def same_as(self, other: "GridGeometry") -> bool:
        return (self.dims == other.dims
                and np.array_equal(self.bbox_min, other.bbox_min)
                and np.array_equal(self.bbox_max, other.bbox_max))

    def voxel_centers(self, flat_idx: Optional[np.ndarray] = None) -> np.ndarray:
        """Centros de vóxel (N, 3); todos o los índices planos dados."""
        if flat_idx is None:
            flat_idx = np.arange(self.n_voxels)
        ijk = np.stack(np.unravel_index(np.asarray(flat_idx), self.dims), axis=-1)
        return self.bbox_min + (ijk + 0.5) * self.voxel_size

    def inside(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return np.all((p >= self.bbox_min) & (p <= self.bbox_max), axis=-1)

    def trilinear_stencil(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """
        Índices planos y pesos de las 8 esquinas de cada punto.

        Parámetros:
        - points: array (..., 3) en coordenadas de mundo

        Retorna:
        - idx: (..., 8) int64
        - w: (..., 8) float64 (cero para puntos fuera de la caja)
        """
        p = np.asarray(points, dtype=np.float64)
        dims = np.asarray(self.dims)
        u = (p - self.bbox_min) / self.voxel_size - 0.5
        u = np.clip(u, 0.0, dims - 1)
        i0 = np.minimum(np.floor(u).astype(np.int64), np.maximum(dims - 2, 0))
        f = u - i0

        ijk = i0[..., None, :] + _ESQUINAS
        ijk = np.minimum(ijk, dims - 1)
        idx = np.ravel_multi_index((ijk[..., 0], ijk[..., 1], ijk[..., 2]), self.dims)

        fx, fy, fz = f[..., 0:1], f[..., 1:2], f[..., 2:3]
        w = (np.where(_ESQUINAS[:, 0] == 1, fx, 1.0 - fx)
             * np.where(_ESQUINAS[:, 1] == 1, fy, 1.0 - fy)
             * np.where(_ESQUINAS[:, 2] == 1, fz, 1.0 - fz))
        w = w * self.inside(p)[..., None]
        return idx, w


def scatter_to_voxels(n_voxels: int, idx: np.ndarray, w: np.ndarray,
                      valores: np.ndarray) -> np.ndarray:
    """
    Acumula valores por punto en los vóxeles de su stencil (transpuesta
    de la interpolación trilineal).

    - idx, w: (M, 8)
    - valores: (M,) o (M, C)
    Retorna (n_voxels,) o (n_voxels, C).
    """
    idx = idx.reshape(-1)
    if valores.ndim == 1:
        return np.bincount(idx, weights=(w * valores[:, None]).reshape(-1), minlength=n_voxels)
    columnas = [
        np.bincount(idx, weights=(w * valores[:, c:c + 1]).reshape(-1), minlength=n_voxels)
        for c in range(valores.shape[1])
    ]
    return np.stack(columnas, axis=-1)


@dataclass
class DensityGrid:
    """
    Grilla de densidad σ ≥ 0 (unidades: 1/longitud de mundo).

    values[ix, iy, iz]; fuera de la caja la densidad es 0.
    """

    geometry: GridGeometry
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = _as_stored(self.values)
        if self.values.shape != self.geometry.dims:
            raise ConfigurationError(
                f"values {self.values.shape} no coincide con dims {self.geometry.dims}")
        _check_density(self.values)

    @classmethod
    def create(cls, dims, bbox_min, bbox_max, values=None) -> "DensityGrid":
        geo = GridGeometry(tuple(dims), bbox_min, bbox_max)
        if values is None:
            values = np.zeros(geo.dims)
        return cls(geo, values)

    @property
    def dims(self):
        return self.geometry.dims

    @property
    def half_width(self) -> float:
        return self.geometry.half_width

    def with_values(self, values: np.ndarray) -> "DensityGrid":
        """Escritura validada (σ ≥ 0 y finito)."""
        return DensityGrid(self.geometry, np.array(values, dtype=np.float64))

    def copy(self) -> "DensityGrid":
        return DensityGrid(self.geometry, self.values.copy())


def _as_stored(valores) -> np.ndarray:
    """
    float64 con valores representables en float32.

    Las grillas guardan exactamente lo que cabe en un checkpoint, así
    load(save(x)) devuelve x bit a bit.
    """
    return np.asarray(valores, dtype=np.float64).astype(np.float32).astype(np.float64)


def _check_density(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise ConfigurationError("La densidad contiene valores no finitos")
    if np.any(values < 0):
        raise ConfigurationError(f"Densidad negativa (mínimo {values.min():.3e})")


@dataclass
class ShColorGrid:
    """
    Grilla de coeficientes SH: coeffs[ix, iy, iz, canal, idx(l, m)].
    """

    geometry: GridGeometry
    degree: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.degree = check_degree(self.degree)
        self.coeffs = _as_stored(self.coeffs)
        esperado = self.geometry.dims + (3, num_coeffs(self.degree))
        if self.coeffs.shape != esperado:
            raise ConfigurationError(f"coeffs {self.coeffs.shape} ≠ {esperado}")

    @classmethod
    def zeros_like(cls, density: DensityGrid, degree: int) -> "ShColorGrid":
        degree = check_degree(degree)
        return cls(density.geometry, degree,
                   np.zeros(density.dims + (3, num_coeffs(degree))))

    @classmethod
    def from_uniform(cls, density: DensityGrid, sh: ShCoeffs) -> "ShColorGrid":
        coeffs = np.broadcast_to(sh.coeffs, density.dims + sh.coeffs.shape).copy()
        return cls(density.geometry, sh.degree, coeffs)

    @property
    def flat(self) -> np.ndarray:
        """Vista (n_voxels, 3·n) para indexar por stencil."""
        return self.coeffs.reshape(self.geometry.n_voxels, -1)

    def copy(self) -> "ShColorGrid":
        return ShColorGrid(self.geometry, self.degree, self.coeffs.copy())


def max_filter3(values: np.ndarray, fill=None) -> np.ndarray:
    """
    Máximo sobre la vecindad 3×3×3 de cada vóxel.

    fill=None replica el borde; un valor explícito rellena el exterior.
    """
    if fill is None:
        pad = np.pad(values, 1, mode='edge')
    else:
        pad = np.pad(values, 1, mode='constant', constant_values=fill)
    nx, ny, nz = values.shape
    out = pad[0:nx, 0:ny, 0:nz].copy()
    for dx in range(3):
        for dy in range(3):
            for dz in range(3):
                np.maximum(out, pad[dx:dx + nx, dy:dy + ny, dz:dz + nz], out=out)
    return out


def dilate_mask(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Dilatación binaria con vecindad de 26 vóxeles."""
    out = np.asarray(mask, dtype=bool)
    for _ in range(iterations):
        out = max_filter3(out.astype(np.int8), fill=0).astype(bool)
    return out


def sample_density(grid: DensityGrid, points) -> np.ndarray:
    """
    Densidad interpolada trilinealmente; 0 fuera de la caja.

    Acepta un punto (3,) o un lote (..., 3).
    """
    idx, w = grid.geometry.trilinear_stencil(points)
    valores = grid.values.reshape(-1)[idx]
    return np.sum(valores * w, axis=-1)


def sample_sh_array(grid: ShColorGrid, points) -> np.ndarray:
    """Coeficientes interpolados (..., 3, n); ceros fuera de la caja."""
    idx, w = grid.geometry.trilinear_stencil(points)
    datos = grid.flat[idx]                       # (..., 8, 3n)
    mezcla = np.einsum('...k,...kc->...c', w, datos)
    return mezcla.reshape(mezcla.shape[:-1] + (3, num_coeffs(grid.degree)))


def sample_sh(grid: ShColorGrid, p) -> ShCoeffs:
    """Coeficientes SH interpolados en un punto."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    return ShCoeffs(grid.degree, sample_sh_array(grid, p))
