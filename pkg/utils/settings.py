# utils/settings.py
# Configuración del proceso (.env + variables de entorno) y logging

import os
import sys
from pathlib import Path
from typing import Optional, Type, TypeVar

from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, Field, ValidationError

from utils.errors import ConfigurationError

M = TypeVar("M", bound=BaseModel)


class Settings(BaseModel):
    """
    Ajustes globales leídos del entorno.

    Ninguna variable es obligatoria:
    - CFRF_LOG_LEVEL: nivel de logging (INFO)
    - CFRF_LOG_FILE: archivo de log adicional (opcional)
    - CFRF_THREADS: hilos para la estimación por vóxel (1)
    - CFRF_CHUNK_SAMPLES: muestras por bloque al renderizar (262144)
    """

    log_level: str = "INFO"
    log_file: Optional[str] = None
    threads: int = Field(default=1, ge=1)
    chunk_samples: int = Field(default=262144, ge=1024)


def load_settings(env_file: Optional[str] = None) -> Settings:
    """Carga `.env` (si existe) y valida las variables CFRF_*."""
    load_dotenv(env_file, override=False)

    valores = {
        'log_level': os.getenv("CFRF_LOG_LEVEL", "INFO"),
        'log_file': os.getenv("CFRF_LOG_FILE") or None,
        'threads': os.getenv("CFRF_THREADS", "1"),
        'chunk_samples': os.getenv("CFRF_CHUNK_SAMPLES", "262144"),
    }
    try:
        return Settings.model_validate(valores)
    except ValidationError as e:
        raise ConfigurationError(f"Variables de entorno inválidas: {e}") from e


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Reemplaza el handler por defecto de loguru."""
    logger.remove()
    logger.add(sys.stderr, level=level.upper(),
               format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {message}")
    if log_file:
        logger.add(log_file, level="DEBUG", rotation="10 MB", encoding="utf-8")


def load_model(modelo: Type[M], ruta: Optional[str] = None, **overrides) -> M:
    """
    Carga y valida un modelo pydantic desde JSON.

    Parámetros:
    - modelo: clase BaseModel a validar
    - ruta: archivo JSON (None = valores por defecto)
    - overrides: campos que pisan lo leído del archivo (None se ignora)

    Retorna:
    - instancia validada del modelo
    """
    try:
        if ruta:
            texto = Path(ruta).read_text(encoding='utf-8')
            base = modelo.model_validate_json(texto)
        else:
            base = modelo()
        cambios = {k: v for k, v in overrides.items() if v is not None}
        if not cambios:
            return base
        return modelo.model_validate({**base.model_dump(), **cambios})
    except FileNotFoundError as e:
        raise ConfigurationError(f"No existe el archivo de configuración: {ruta}") from e
    except ValidationError as e:
        raise ConfigurationError(f"Configuración inválida ({modelo.__name__}): {e}") from e
