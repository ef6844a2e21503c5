"""
Errores del dominio UP-GAN.
Cada familia de error tiene su clase para que los canales puedan reportarla sin conocer el módulo que falló.
"""

from typing import Optional


class UpganError(Exception):
    """Base de todos los errores del dominio."""


class ParseError(UpganError):
    """Nombre de archivo con formato inválido (token ofensivo en el mensaje)."""

    def __init__(self, mensaje: str, token: Optional[str] = None):
        super().__init__(mensaje)
        self.token = token


class AnnotationError(UpganError):
    """Archivo de landmarks incompleto o ilegible."""


class CorpusError(UpganError):
    """Corpus vacío, inexistente o sin las anotaciones necesarias."""


class ShapeError(UpganError):
    """Dimensiones de entrada incompatibles."""


class ConfigError(UpganError):
    """Configuración inválida (claves desconocidas, rangos, capas inexistentes)."""


class ValidationError(UpganError):
    """Valores fuera del dominio esperado (por ejemplo, máscara no binaria)."""


class NumericalError(UpganError):
    """NaN o valores numéricamente imposibles; nombra el término culpable."""

    def __init__(self, mensaje: str, termino: Optional[str] = None):
        super().__init__(mensaje)
        self.termino = termino


class TrainingError(UpganError):
    """Entrenamiento abortado o sin converger."""

    def __init__(
        self,
        mensaje: str,
        ultimo_checkpoint: Optional[str] = None,
        precision: Optional[float] = None,
    ):
        super().__init__(mensaje)
        self.ultimo_checkpoint = ultimo_checkpoint
        self.precision = precision


class CheckpointError(UpganError):
    """Checkpoint ilegible o con configuración distinta a la esperada."""


class BoundaryError(UpganError):
    """La máscara toca el borde de la imagen."""


class SwapError(UpganError):
    """No se pudo hacer el intercambio de cara (máscara vacía)."""


class SampleSizeError(UpganError):
    """Conjunto demasiado chico para estimar una covarianza estable."""


class SplitError(UpganError):
    """Partición entrenamiento/prueba degenerada."""
