# generators/corruptions.py
# Geometría deliberadamente equivocada: floaters, engrosado y erosión

from typing import Optional

import numpy as np
from loguru import logger

from utils.errors import ConfigurationError
from utils.field_grid import DensityGrid, dilate_mask, max_filter3


def add_floaters(density: DensityGrid, fraction: float = 0.01, seed: int = 0,
                 amplitude: Optional[float] = None, margin: int = 1) -> DensityGrid:
    """
    Agrega manchas de densidad (3×3×3) en espacio libre.

    Parámetros:
    - fraction: fracción de los vóxeles libres que terminan ocupados
    - amplitude: densidad de las manchas (por defecto el máximo de la grilla)
    - margin: vóxeles libres de separación respecto de la geometría y del borde
    """
    if not 0 < fraction < 1:
        raise ConfigurationError(f"fraction debe estar en (0, 1): {fraction}")
    valores = density.values
    amp = float(np.max(valores)) if amplitude is None else float(amplitude)
    if amp <= 0:
        raise ConfigurationError("Grilla vacía: indicar `amplitude` para los floaters")

    # centros candidatos: libres, lejos de la geometría y del borde
    ocupado = dilate_mask(valores > 0, margin + 1)
    borde = np.ones(density.dims, dtype=bool)
    m = margin + 1
    borde[m:-m, m:-m, m:-m] = False
    candidatos = np.flatnonzero(~ocupado & ~borde)
    libres = int(np.sum(valores == 0))
    n_centros = max(1, int(round(fraction * libres / 27.0)))
    if len(candidatos) == 0:
        raise ConfigurationError("No hay espacio libre para agregar floaters")

    rng = np.random.default_rng(seed)
    centros = rng.choice(candidatos, size=min(n_centros, len(candidatos)), replace=False)
    semilla = np.zeros(density.geometry.n_voxels, dtype=bool)
    semilla[centros] = True
    manchas = dilate_mask(semilla.reshape(density.dims), 1)
    logger.debug(f"Floaters: {len(centros)} manchas, σ={amp:g}")
    return density.with_values(np.where(manchas & (valores == 0), amp, valores))


def thicken(density: DensityGrid, layers: int = 1) -> DensityGrid:
    """Engrosa la geometría `layers` vóxeles (máximo sobre la vecindad 26)."""
    if layers < 1:
        raise ConfigurationError(f"layers debe ser ≥ 1: {layers}")
    valores = density.values
    for _ in range(layers):
        valores = max_filter3(valores, fill=0.0)
    return density.with_values(valores)


def erode(density: DensityGrid, layers: int = 1) -> DensityGrid:
    """
    Quita `layers` capas de superficie: un vóxel sobrevive sólo si toda su
    vecindad está ocupada. El borde de la grilla no cuenta como vacío.
    """
    if layers < 1:
        raise ConfigurationError(f"layers debe ser ≥ 1: {layers}")
    valores = density.values
    for _ in range(layers):
        vacio = (valores <= 0).astype(np.int8)
        valores = np.where(max_filter3(vacio) > 0, 0.0, valores)
    return density.with_values(valores)
