# parsers/dataset.py
# Lectura y escritura de datasets con pose: cameras.json + NNN.png

"""
Formato del directorio:

    cameras.json   [{fx, fy, cx, cy, width, height, cam_to_world: 12 reales, file: "NNN.png"}, ...]
    000.png        RGB de 8 bits, valores lineales en [0, 1] (sin gamma)
    001.png
    ...
"""

import json
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from loguru import logger
from PIL import Image

from utils.camera import Camera, PosedImage
from utils.errors import CfrfError, DatasetError

CAMERAS_FILE = "cameras.json"


def quantize(pixels) -> np.ndarray:
    """[0, 1] → uint8 con redondeo; es la única cuantización del formato."""
    return np.round(np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path: Union[str, Path], pixels) -> Path:
    path = Path(path)
    Image.fromarray(quantize(pixels)).save(path)
    return path


def load_image(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0


def save_dataset(directorio: Union[str, Path], dataset: Sequence[PosedImage]) -> Path:
    """
    Escribe cameras.json y una PNG por vista.

    Retorna:
    - ruta de cameras.json
    """
    directorio = Path(directorio)
    directorio.mkdir(parents=True, exist_ok=True)
    entradas = []
    for k, img in enumerate(dataset):
        nombre = f"{k:03d}.png"
        save_image(directorio / nombre, img.pixels)
        entradas.append({**img.camera.to_dict(), 'file': nombre})

    ruta = directorio / CAMERAS_FILE
    with open(ruta, 'w', encoding='utf-8') as f:
        json.dump(entradas, f, indent=2)
    logger.debug(f"Dataset guardado: {len(entradas)} vistas en {directorio}")
    return ruta


def load_cameras(ruta: Union[str, Path]) -> List[Camera]:
    """
    Cámaras de un cameras.json (o de un directorio que lo contenga).

    No abre las imágenes: alcanza para `render`.
    """
    return [cam for cam, _ in _read_entries(ruta)]


def _read_entries(ruta: Union[str, Path]):
    ruta = Path(ruta)
    if ruta.is_dir():
        ruta = ruta / CAMERAS_FILE
    if not ruta.exists():
        raise DatasetError(f"No existe {ruta}", {'file': str(ruta)})
    try:
        entradas = json.loads(ruta.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise DatasetError(f"JSON mal formado en {ruta}: {e}", {'file': str(ruta)}) from e
    if not isinstance(entradas, list):
        raise DatasetError(f"{ruta} debe contener una lista de cámaras", {'file': str(ruta)})

    resultado = []
    for k, entrada in enumerate(entradas):
        try:
            cam = Camera.from_dict(entrada)
        except CfrfError as e:
            raise DatasetError(f"Cámara {k} inválida en {ruta}: {e.mensaje}",
                               {'file': str(ruta), 'index': k}) from e
        archivo = entrada.get('file') if isinstance(entrada, dict) else None
        resultado.append((cam, archivo))
    return resultado


def load_dataset(directorio: Union[str, Path]) -> List[PosedImage]:
    """
    Carga un dataset con pose.

    Errores:
    - DatasetError si cameras.json falta o está mal formado, si falta una
      imagen (el error nombra el archivo) o si su resolución no coincide
      con la cámara
    """
    directorio = Path(directorio)
    vistas = []
    for k, (cam, archivo) in enumerate(_read_entries(directorio)):
        if not archivo:
            raise DatasetError(f"La cámara {k} no indica `file`", {'index': k})
        ruta_img = directorio / archivo
        if not ruta_img.exists():
            raise DatasetError(f"Falta la imagen {archivo}", {'file': str(ruta_img)})
        try:
            pixels = load_image(ruta_img)
        except OSError as e:
            raise DatasetError(f"No se pudo leer {archivo}: {e}", {'file': str(ruta_img)}) from e
        if pixels.shape[:2] != (cam.height, cam.width):
            raise DatasetError(
                f"Resolución de {archivo} ({pixels.shape[1]}×{pixels.shape[0]}) no coincide "
                f"con la cámara ({cam.width}×{cam.height})", {'file': str(ruta_img)})
        vistas.append(PosedImage(cam, pixels))
    logger.debug(f"Dataset cargado: {len(vistas)} vistas desde {directorio}")
    return vistas


def load_reference_depths(directorio: Union[str, Path]) -> Optional[List[np.ndarray]]:
    """
    Profundidades de referencia depth/NNN.f32 (float32 crudo, H×W) si el
    dataset las trae; None si falta alguna.
    """
    directorio = Path(directorio)
    mapas = []
    for k, (cam, _) in enumerate(_read_entries(directorio)):
        ruta = directorio / "depth" / f"{k:03d}.f32"
        if not ruta.exists():
            return None
        valores = np.fromfile(ruta, dtype='<f4').astype(np.float64)
        if valores.size != cam.width * cam.height:
            raise DatasetError(f"{ruta.name} no coincide con la resolución de la cámara {k}",
                               {'file': str(ruta)})
        mapas.append(valores.reshape(cam.height, cam.width))
    return mapas
