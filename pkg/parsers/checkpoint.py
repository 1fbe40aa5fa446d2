# parsers/checkpoint.py
# Lectura/escritura de checkpoints binarios .cfrf

"""
Formato (little-endian):

    magic "CFRF" | version u32 = 1 | flags u32 (bit0 = color presente)
    dims 3×u32 | bbox 6×f64 (min xyz, max xyz) | grado SH u32
    densidad f32[Nx·Ny·Nz] (x más rápido)
    coeficientes f32[vóxel][canal][idx(l, m)] (si bit0)
"""

from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from loguru import logger

from utils.errors import CheckpointError, CfrfError
from utils.field_grid import DensityGrid, GridGeometry, ShColorGrid
from utils.sh_basis import num_coeffs

MAGIC = b"CFRF"
VERSION = 1
FLAG_COLOR = 1
MAX_VOXELS = 2 ** 31 - 1

HEADER = np.dtype([
    ('magic', 'S4'),
    ('version', '<u4'),
    ('flags', '<u4'),
    ('dims', '<u4', (3,)),
    ('bbox', '<f8', (6,)),
    ('degree', '<u4'),
])


def save_checkpoint(path: Union[str, Path], density: DensityGrid,
                    color: Optional[ShColorGrid] = None) -> Path:
    """
    Guarda densidad (y opcionalmente color) en formato .cfrf.

    Los valores se guardan como f32; las grillas ya son representables
    en f32, así que load(save(x)) reproduce x bit a bit.
    """
    path = Path(path)
    geo = density.geometry
    if color is not None and not color.geometry.same_as(geo):
        raise CheckpointError("La grilla de color no coincide con la de densidad")

    header = np.zeros((), dtype=HEADER)
    header['magic'] = MAGIC
    header['version'] = VERSION
    header['flags'] = FLAG_COLOR if color is not None else 0
    header['dims'] = geo.dims
    header['bbox'] = np.concatenate([geo.bbox_min, geo.bbox_max])
    header['degree'] = color.degree if color is not None else 0

    dens = density.values.transpose(2, 1, 0).astype('<f4')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            f.write(header.tobytes())
            f.write(dens.tobytes(order='C'))
            if color is not None:
                coefs = color.coeffs.transpose(2, 1, 0, 3, 4).astype('<f4')
                f.write(coefs.tobytes(order='C'))
    except OSError as e:
        raise CheckpointError(f"No se pudo escribir {path}: {e}") from e

    logger.debug(f"Checkpoint guardado: {path} (color={'sí' if color is not None else 'no'})")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[DensityGrid, Optional[ShColorGrid]]:
    """
    Lee un checkpoint .cfrf.

    Retorna:
    - (DensityGrid, ShColorGrid o None si el archivo no trae color)
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"No se pudo leer {path}: {e}") from e

    if len(raw) < HEADER.itemsize:
        raise CheckpointError(f"Archivo truncado (cabecera incompleta): {path}",
                              {'bytes': len(raw), 'esperado_min': HEADER.itemsize})

    header = np.frombuffer(raw, dtype=HEADER, count=1)[0]
    if bytes(header['magic']) != MAGIC:
        raise CheckpointError(f"Magic inválido en {path}: {bytes(header['magic'])!r}")
    if int(header['version']) != VERSION:
        raise CheckpointError(f"Versión no soportada: {int(header['version'])}")

    dims = tuple(int(n) for n in header['dims'])
    n_vox = int(np.prod([float(n) for n in dims]))
    if min(dims) == 0 or n_vox > MAX_VOXELS:
        raise CheckpointError(f"Dimensiones inválidas o desbordadas: {dims}")

    flags = int(header['flags'])
    degree = int(header['degree'])
    tiene_color = bool(flags & FLAG_COLOR)
    n_coef = 3 * num_coeffs(degree) if tiene_color and degree <= 4 else 0
    if tiene_color and degree > 4:
        raise CheckpointError(f"Grado SH inválido en checkpoint: {degree}")

    esperado = HEADER.itemsize + 4 * n_vox * (1 + n_coef)
    if len(raw) < esperado:
        raise CheckpointError(f"Archivo truncado: {len(raw)} de {esperado} bytes",
                              {'bytes': len(raw), 'esperado': esperado})
    if len(raw) > esperado:
        raise CheckpointError(f"Bytes sobrantes al final de {path}: {len(raw)} de {esperado}",
                              {'bytes': len(raw), 'esperado': esperado})

    bbox = np.asarray(header['bbox'], dtype=np.float64)
    offset = HEADER.itemsize
    dens = np.frombuffer(raw, dtype='<f4', count=n_vox, offset=offset)
    dens = dens.reshape(dims[::-1]).transpose(2, 1, 0).astype(np.float64)

    try:
        geo = GridGeometry(dims, bbox[:3], bbox[3:])
        density = DensityGrid(geo, dens)
        color = None
        if tiene_color:
            offset += 4 * n_vox
            coefs = np.frombuffer(raw, dtype='<f4', count=n_vox * n_coef, offset=offset)
            coefs = coefs.reshape(dims[::-1] + (3, num_coeffs(degree)))
            coefs = coefs.transpose(2, 1, 0, 3, 4).astype(np.float64)
            color = ShColorGrid(geo, degree, coefs)
    except CheckpointError:
        raise
    except CfrfError as e:
        raise CheckpointError(f"Contenido inválido en {path}: {e.mensaje}") from e

    logger.debug(f"Checkpoint leído: {path} dims={dims} color={tiene_color}")
    return density, color
