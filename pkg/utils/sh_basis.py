# utils/sh_basis.py
# Armónicos esféricos reales (grado ≤ 4) y evaluación de color SH

"""
Convención:
- SH reales con normalización L2 unitaria sobre la esfera.
- SIN fase de Condon–Shortley (Y_1^{-1} = C1·y, Y_1^0 = C1·z, Y_1^1 = C1·x).
- Índice plano canónico: idx(l, m) = l² + l + m.

Con esta convención ∫ Y_l^m Y_i^j dd = δ_li δ_mj, que es lo que usa la
estimación Monte Carlo de coeficientes.
"""

from dataclasses import dataclass
from math import pi, sqrt
from typing import Dict, List, Sequence, Tuple

import numpy as np

from utils.errors import ConfigurationError, NormalizationError

SH_DEGREE_MAX = 4
UNIT_TOL = 1e-6

C0 = 0.5 * sqrt(1.0 / pi)
C1 = sqrt(3.0 / (4.0 * pi))
C2 = [
    0.5 * sqrt(15.0 / pi),     # xy
    0.5 * sqrt(15.0 / pi),     # yz
    0.25 * sqrt(5.0 / pi),     # 3z²-1
    0.5 * sqrt(15.0 / pi),     # xz
    0.25 * sqrt(15.0 / pi),    # x²-y²
]
C3 = [
    0.25 * sqrt(35.0 / (2.0 * pi)),
    0.5 * sqrt(105.0 / pi),
    0.25 * sqrt(21.0 / (2.0 * pi)),
    0.25 * sqrt(7.0 / pi),
    0.25 * sqrt(21.0 / (2.0 * pi)),
    0.25 * sqrt(105.0 / pi),
    0.25 * sqrt(35.0 / (2.0 * pi)),
]
C4 = [
    0.75 * sqrt(35.0 / pi),
    0.75 * sqrt(35.0 / (2.0 * pi)),
    0.75 * sqrt(5.0 / pi),
    0.75 * sqrt(5.0 / (2.0 * pi)),
    3.0 / 16.0 * sqrt(1.0 / pi),
    0.75 * sqrt(5.0 / (2.0 * pi)),
    3.0 / 8.0 * sqrt(5.0 / pi),
    0.75 * sqrt(35.0 / (2.0 * pi)),
    3.0 / 16.0 * sqrt(35.0 / pi),
]


def sh_index(l: int, m: int) -> int:
    """Índice plano de (l, m)."""
    return l * l + l + m


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def basis_order(degree: int) -> List[Tuple[int, int]]:
    """Lista (l, m) en el orden canónico."""
    return [(l, m) for l in range(degree + 1) for m in range(-l, l + 1)]


def check_degree(degree: int) -> int:
    if not isinstance(degree, (int, np.integer)) or degree < 0 or degree > SH_DEGREE_MAX:
        raise ConfigurationError(f"Grado SH fuera de rango [0, {SH_DEGREE_MAX}]: {degree}")
    return int(degree)


def check_unit(dirs: np.ndarray, tol: float = UNIT_TOL) -> np.ndarray:
    """Valida que todas las direcciones sean unitarias (|d| = 1 ± tol)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    if dirs.shape[-1] != 3:
        raise NormalizationError(f"Se esperaban vectores 3D, forma {dirs.shape}")
    norma = np.linalg.norm(dirs, axis=-1)
    if not np.all(np.abs(norma - 1.0) <= tol):
        peor = float(np.max(np.abs(norma - 1.0)))
        raise NormalizationError(f"Dirección no unitaria (desvío máximo {peor:.3e})")
    return dirs


def eval_basis(degree: int, dirs, check: bool = True) -> np.ndarray:
    """
    Evalúa la base SH real en direcciones unitarias.

    Parámetros:
    - degree: grado L (0..4)
    - dirs: array (..., 3) de direcciones unitarias
    - check: validar la norma (desactivar sólo en bucles internos ya validados)

    Retorna:
    - array (..., (L+1)²) en orden canónico idx(l, m)
    """
    degree = check_degree(degree)
    d = check_unit(dirs) if check else np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]

    out = np.empty(d.shape[:-1] + (num_coeffs(degree),), dtype=np.float64)
    out[..., 0] = C0
    if degree >= 1:
        out[..., 1] = C1 * y
        out[..., 2] = C1 * z
        out[..., 3] = C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = C2[0] * x * y
        out[..., 5] = C2[1] * y * z
        out[..., 6] = C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = C2[3] * x * z
        out[..., 8] = C2[4] * (xx - yy)
    if degree >= 3:
        t = 4.0 * zz - xx - yy
        out[..., 9] = C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = C3[1] * x * y * z
        out[..., 11] = C3[2] * y * t
        out[..., 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = C3[4] * x * t
        out[..., 14] = C3[5] * z * (xx - yy)
        out[..., 15] = C3[6] * x * (xx - 3.0 * yy)
    if degree >= 4:
        out[..., 16] = C4[0] * x * y * (xx - yy)
        out[..., 17] = C4[1] * y * z * (3.0 * xx - yy)
        out[..., 18] = C4[2] * x * y * (7.0 * zz - 1.0)
        out[..., 19] = C4[3] * y * z * (7.0 * zz - 3.0)
        out[..., 20] = C4[4] * (35.0 * zz * zz - 30.0 * zz + 3.0)
        out[..., 21] = C4[5] * x * z * (7.0 * zz - 3.0)
        out[..., 22] = C4[6] * (xx - yy) * (7.0 * zz - 1.0)
        out[..., 23] = C4[7] * x * z * (xx - 3.0 * yy)
        out[..., 24] = C4[8] * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy))
    return out


@dataclass
class ShCoeffs:
    """
    Coeficientes SH de un punto: 3 canales × (L+1)² valores.

    coeffs[c, idx(l, m)] = h_l^m del canal c.
    """

    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.degree = check_degree(self.degree)
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        esperado = (3, num_coeffs(self.degree))
        if self.coeffs.shape != esperado:
            raise ConfigurationError(
                f"ShCoeffs de grado {self.degree} requiere forma {esperado}, "
                f"recibido {self.coeffs.shape}"
            )

    @classmethod
    def zeros(cls, degree: int) -> "ShCoeffs":
        return cls(degree, np.zeros((3, num_coeffs(check_degree(degree)))))

    @classmethod
    def from_rgb(cls, rgb: Sequence[float], degree: int = 0) -> "ShCoeffs":
        """Campo DC: h_0^0 = c / Y_0^0 (independiente de la vista)."""
        sh = cls.zeros(degree)
        sh.coeffs[:, 0] = np.asarray(rgb, dtype=np.float64) / C0
        return sh

    def __add__(self, other: "ShCoeffs") -> "ShCoeffs":
        return ShCoeffs(self.degree, self.coeffs + other.coeffs)

    def __mul__(self, escalar: float) -> "ShCoeffs":
        return ShCoeffs(self.degree, self.coeffs * escalar)

    __rmul__ = __mul__

    def to_dict(self) -> Dict:
        """Serializa con el orden (l, m) explícito."""
        return {
            'degree': self.degree,
            'order': [list(lm) for lm in basis_order(self.degree)],
            'coeffs': self.coeffs.tolist(),
        }

    @classmethod
    def from_dict(cls, datos: Dict) -> "ShCoeffs":
        degree = int(datos['degree'])
        orden = [tuple(lm) for lm in datos.get('order', basis_order(degree))]
        valores = np.asarray(datos['coeffs'], dtype=np.float64)
        coeffs = np.zeros((3, num_coeffs(degree)))
        for col, (l, m) in enumerate(orden):
            coeffs[:, sh_index(l, m)] = valores[:, col]
        return cls(degree, coeffs)


def eval_color(coeffs: ShCoeffs, dirs) -> np.ndarray:
    """
    Color RGB Σ h_l^m Y_l^m(d) por canal. No se recorta a [0, 1].

    Retorna:
    - array (..., 3)
    """
    base = eval_basis(coeffs.degree, dirs)
    return base @ coeffs.coeffs.T


def eval_color_array(coeffs: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Versión por lotes: coeffs (..., 3, n) y base (..., n) → (..., 3)."""
    return np.einsum('...cn,...n->...c', coeffs, basis)


def fibonacci_sphere(n: int, hemisphere: bool = False, offset: float = 0.0) -> np.ndarray:
    """
    Retícula de Fibonacci esférica (casi uniforme).

    Parámetros:
    - n: número de puntos
    - hemisphere: sólo z ≥ 0
    - offset: rotación azimutal en radianes

    Retorna:
    - array (n, 3) de direcciones unitarias
    """
    i = np.arange(n, dtype=np.float64) + 0.5
    if hemisphere:
        z = 1.0 - i / n
    else:
        z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    golden = pi * (3.0 - sqrt(5.0))
    phi = golden * i + offset
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def project_to_basis(fn, degree: int, n: int = 100000) -> ShCoeffs:
    """
    Proyecta una función de color sobre la base por cuadratura densa.

    fn recibe direcciones (n, 3) y devuelve colores (n, 3).
    """
    dirs = fibonacci_sphere(n)
    base = eval_basis(degree, dirs, check=False)
    colores = np.asarray(fn(dirs), dtype=np.float64)
    coeffs = (4.0 * pi / n) * (colores.T @ base)
    return ShCoeffs(degree, coeffs)
