"""
Directorios de corrida y sus manifiestos.
Cada comando deja en su directorio de salida la configuración resuelta, la semilla y la versión del código.
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import yaml

from core import __version__
from core.errores import ConfigError

logger = logging.getLogger(__name__)

NOMBRE_MANIFIESTO_CORRIDA = "run_manifest.yaml"
VARIABLE_RAIZ_SALIDA = "UPGAN_OUTPUT_ROOT"


@dataclass
class Corrida:
    comando: str
    directorio: Path
    config: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    version: str = __version__

    def como_dict(self) -> Dict[str, Any]:
        return {
            "comando": self.comando,
            "version": self.version,
            "seed": self.seed,
            "config": self.config,
        }


def resolver_salida(ruta: Union[str, Path]) -> Path:
    """Las rutas relativas cuelgan de UPGAN_OUTPUT_ROOT si está definida."""
    ruta = Path(ruta)
    raiz = os.environ.get(VARIABLE_RAIZ_SALIDA)
    if raiz and not ruta.is_absolute():
        return Path(raiz) / ruta
    return ruta


def a_yaml(valor: Any) -> Any:
    """Convierte rutas, tuplas y escalares numpy a tipos que yaml.safe_dump acepta."""
    if isinstance(valor, Path):
        return str(valor)
    if isinstance(valor, np.generic):
        return valor.item()
    if isinstance(valor, tuple):
        return [a_yaml(v) for v in valor]
    if isinstance(valor, list):
        return [a_yaml(v) for v in valor]
    if isinstance(valor, dict):
        return {str(k): a_yaml(v) for k, v in valor.items()}
    return valor


def crear_corrida(comando: str, directorio: Union[str, Path], config: Dict[str, Any], seed: Optional[int] = None) -> Corrida:
    """Crea el directorio y escribe el manifiesto. Sin marcas de tiempo: dos corridas iguales dan bytes iguales."""
    directorio = Path(directorio)
    try:
        directorio.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"no se pudo crear el directorio de salida {directorio}: {e}") from e
    corrida = Corrida(comando=comando, directorio=directorio, config=a_yaml(config), seed=seed)
    with open(directorio / NOMBRE_MANIFIESTO_CORRIDA, "w", encoding="utf-8") as f:
        yaml.safe_dump(corrida.como_dict(), f, sort_keys=False)
    logger.info("Corrida %s: manifiesto en %s", comando, directorio)
    return corrida


def escribir_yaml(ruta: Union[str, Path], datos: Dict[str, Any]) -> Path:
    ruta = Path(ruta)
    ruta.write_text(yaml.safe_dump(a_yaml(datos), sort_keys=False), encoding="utf-8")
    return ruta


def leer_corrida(directorio: Union[str, Path]) -> Corrida:
    directorio = Path(directorio)
    ruta = directorio / NOMBRE_MANIFIESTO_CORRIDA
    if not ruta.is_file():
        raise ConfigError(f"{directorio} no tiene {NOMBRE_MANIFIESTO_CORRIDA}")
    datos = yaml.safe_load(ruta.read_text(encoding="utf-8")) or {}
    return Corrida(
        comando=datos.get("comando", ""),
        directorio=directorio,
        config=datos.get("config") or {},
        seed=datos.get("seed"),
        version=datos.get("version", ""),
    )
