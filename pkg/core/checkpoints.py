"""
Contenedor versionado de checkpoints: configuración, parámetros de G y D, estado de los
optimizadores, paso de entrenamiento y la red perceptual congelada.
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch

from core.errores import CheckpointError, ConfigError
from core.model import (
    Generator,
    IdentityNet,
    IdentityNetConfig,
    ModelConfig,
    PerceptualConfig,
)

logger = logging.getLogger(__name__)

FORMATO = "upgan-checkpoint"
VERSION_FORMATO = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    generator_state: Dict[str, torch.Tensor]
    discriminator_state: Dict[str, torch.Tensor]
    step: int = 0
    train_config: Dict[str, Any] = field(default_factory=dict)
    opt_g_state: Optional[dict] = None
    opt_d_state: Optional[dict] = None
    perceptual: Optional[Dict[str, Any]] = None
    dtype: str = "float32"

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)

    def construir_generador(self) -> Generator:
        generador = Generator(self.model_config).to(self.torch_dtype)
        _cargar_estado(generador, self.generator_state, "generador")
        generador.eval()
        return generador

    def construir_perceptual(self) -> Optional[PerceptualConfig]:
        if self.perceptual is None:
            return None
        return perceptual_desde_estado(self.perceptual)


def _cargar_estado(modulo: torch.nn.Module, estado: Dict[str, torch.Tensor], nombre: str) -> None:
    try:
        modulo.load_state_dict(estado)
    except RuntimeError as e:
        raise CheckpointError(f"parámetros del {nombre} incompatibles con la configuración: {e}") from e


def estado_perceptual(cfg: PerceptualConfig) -> Dict[str, Any]:
    return {
        "config": cfg.network.cfg.como_dict(),
        "state": cfg.network.state_dict(),
        "layer_set": list(cfg.layer_set),
        "identidades": list(cfg.identidades),
        "precision": cfg.precision,
    }


def perceptual_desde_estado(estado: Dict[str, Any]) -> PerceptualConfig:
    datos = dict(estado["config"])
    datos["canales"] = tuple(datos["canales"])
    red = IdentityNet(IdentityNetConfig(**datos))
    red = red.to(next(iter(estado["state"].values())).dtype)
    _cargar_estado(red, estado["state"], "red perceptual")
    return PerceptualConfig(
        network=red,
        layer_set=tuple(estado["layer_set"]),
        identidades=list(estado["identidades"]),
        precision=estado.get("precision"),
    )


def guardar_checkpoint(ruta: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Escritura atómica: archivo temporal y luego rename."""
    ruta = Path(ruta)
    contenido = {
        "formato": FORMATO,
        "version": VERSION_FORMATO,
        "model_config": checkpoint.model_config.como_dict(),
        "train_config": checkpoint.train_config,
        "generator": checkpoint.generator_state,
        "discriminator": checkpoint.discriminator_state,
        "opt_g": checkpoint.opt_g_state,
        "opt_d": checkpoint.opt_d_state,
        "perceptual": checkpoint.perceptual,
        "step": checkpoint.step,
        "dtype": checkpoint.dtype,
    }
    temporal = ruta.with_name(ruta.name + ".tmp")
    try:
        ruta.parent.mkdir(parents=True, exist_ok=True)
        torch.save(contenido, temporal)
        os.replace(temporal, ruta)
    except OSError as e:
        temporal.unlink(missing_ok=True)
        raise CheckpointError(f"no se pudo escribir el checkpoint {ruta}: {e}") from e
    logger.info("Checkpoint guardado en %s (paso %d)", ruta, checkpoint.step)
    return ruta


def cargar_checkpoint(ruta: Union[str, Path], esperado: Optional[ModelConfig] = None) -> Checkpoint:
    ruta = Path(ruta)
    if not ruta.is_file():
        raise CheckpointError(f"no existe el checkpoint {ruta}")
    try:
        contenido = torch.load(ruta, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"checkpoint ilegible {ruta}: {e}") from e
    if not isinstance(contenido, dict) or contenido.get("formato") != FORMATO:
        raise CheckpointError(f"{ruta} no es un checkpoint de UP-GAN")
    if contenido.get("version") != VERSION_FORMATO:
        raise CheckpointError(
            f"versión de checkpoint {contenido.get('version')} no soportada (se espera {VERSION_FORMATO})"
        )
    try:
        model_config = ModelConfig(**contenido["model_config"])
    except (TypeError, ConfigError) as e:
        raise CheckpointError(f"configuración de modelo inválida en {ruta}: {e}") from e
    checkpoint = Checkpoint(
        model_config=model_config,
        generator_state=contenido["generator"],
        discriminator_state=contenido["discriminator"],
        step=int(contenido["step"]),
        train_config=contenido.get("train_config") or {},
        opt_g_state=contenido.get("opt_g"),
        opt_d_state=contenido.get("opt_d"),
        perceptual=contenido.get("perceptual"),
        dtype=contenido.get("dtype", "float32"),
    )
    if esperado is not None:
        verificar_config(checkpoint, esperado)
    return checkpoint


def verificar_config(checkpoint: Checkpoint, esperado: ModelConfig) -> None:
    """Nunca se reinterpreta un checkpoint con otra configuración."""
    if checkpoint.model_config != esperado:
        diferencias = {
            clave: (valor, getattr(checkpoint.model_config, clave))
            for clave, valor in esperado.como_dict().items()
            if getattr(checkpoint.model_config, clave) != valor
        }
        raise CheckpointError(f"configuración distinta a la del checkpoint (esperado, guardado): {diferencias}")
