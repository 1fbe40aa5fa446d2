# utils/errors.py
# Jerarquía de errores del toolkit

from typing import Any, Dict, Optional

# Códigos de salida del CLI
EXIT_OK = 0
EXIT_VALIDACION = 2
EXIT_NUMERICO = 3


class CfrfError(Exception):
    """
    Error base del toolkit.

    Cada subclase define su `exit_code` para que el CLI pueda
    traducirla directamente a un código de salida.
    """

    exit_code: int = EXIT_VALIDACION
    tipo: str = "error"

    def __init__(self, mensaje: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(mensaje)
        self.mensaje = mensaje
        self.diagnostics = diagnostics or {}

    def to_dict(self) -> Dict[str, Any]:
        """Convierte el error a diccionario (JSON en stderr)."""
        return {
            'error': self.tipo,
            'clase': type(self).__name__,
            'mensaje': self.mensaje,
            'exit_code': self.exit_code,
            'diagnostics': self.diagnostics,
        }


# ── Errores de validación (exit 2) ─────────────────────────────────────────

class ConfigurationError(CfrfError):
    tipo = "validation"


class NormalizationError(CfrfError):
    """Dirección que no es unitaria."""
    tipo = "validation"


class OutOfBoundsError(CfrfError):
    tipo = "validation"


class ShapeMismatchError(CfrfError):
    tipo = "validation"


class CheckpointError(CfrfError):
    """Archivo .cfrf truncado, magic/versión incorrectos o dimensiones inválidas."""
    tipo = "validation"


class DatasetError(CfrfError):
    tipo = "validation"


class EmptyBatchError(CfrfError):
    tipo = "validation"


class OutputError(CfrfError):
    """Directorio o archivo de salida que no se puede crear o escribir."""
    tipo = "validation"


# ── Errores numéricos (exit 3) ─────────────────────────────────────────────

class NumericalError(CfrfError):
    """Divergencia (NaN/inf) durante el entrenamiento o una reducción."""
    exit_code = EXIT_NUMERICO
    tipo = "numerical"
