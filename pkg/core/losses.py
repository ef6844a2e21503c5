"""
Objetivos de entrenamiento: adversarial (no saturante), reconstrucción L2, BCE de máscara y perceptual.
Las normas L2 son sumas por muestra; las esperanzas son promedios sobre el lote.
"""

import logging
from dataclasses import asdict, dataclass, replace
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch

from core.errores import ConfigError, NumericalError, ShapeError, ValidationError
from core.model import CANAL_CARA, Discriminator, Generator, PerceptualConfig, perceptual_features

logger = logging.getLogger(__name__)

EPSILON = 1e-7
ABLACIONES = ("adv_l2", "adv_l2_mask", "full")

Tensorish = Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 5.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    use_adversarial: bool = True
    normalize_losses: bool = False

    def __post_init__(self):
        for nombre in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, nombre) < 0:
                raise ConfigError(f"{nombre} debe ser >= 0: {getattr(self, nombre)}")

    def con_ablacion(self, ablacion: str) -> "LossWeights":
        """adv_l2 apaga máscara y perceptual; adv_l2_mask apaga solo perceptual; full no cambia nada."""
        if ablacion not in ABLACIONES:
            raise ConfigError(f"ablación desconocida '{ablacion}', opciones: {', '.join(ABLACIONES)}")
        if ablacion == "adv_l2":
            return replace(self, lambda2=0.0, lambda3=0.0)
        if ablacion == "adv_l2_mask":
            return replace(self, lambda3=0.0)
        return self


@dataclass(frozen=True)
class LossBreakdown:
    adv_g: float
    recon_l2: float
    mask_bce: float
    perceptual: float
    total_g: float
    total_d: float

    def como_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class LoteEntrenamiento:
    """Lote en formato de red: condición B×17, imágenes B×3×S×S, máscaras B×S×S binarias."""
    condicion: torch.Tensor
    imagenes: torch.Tensor
    mascaras: torch.Tensor

    def __post_init__(self):
        tamano = self.condicion.shape[0]
        if self.imagenes.shape[0] != tamano or self.mascaras.shape[0] != tamano:
            raise ShapeError("condición, imágenes y máscaras deben tener el mismo tamaño de lote")


def _tensor(valor: Tensorish) -> torch.Tensor:
    if isinstance(valor, torch.Tensor):
        return valor
    return torch.from_numpy(np.asarray(valor, dtype=np.float64))


def _promedio_por_muestra(suma_por_elemento: torch.Tensor, lote: bool, normalizar: bool) -> torch.Tensor:
    """Suma por muestra y promedio sobre el lote; si `normalizar`, promedio por elemento."""
    if not lote:
        total = suma_por_elemento.sum()
        return total / suma_por_elemento.numel() if normalizar else total
    por_muestra = suma_por_elemento.flatten(1).sum(dim=1)
    if normalizar:
        por_muestra = por_muestra / suma_por_elemento[0].numel()
    return por_muestra.mean()


# ================================
# TÉRMINOS
# ================================

def recon_l2(real: Tensorish, fake: Tensorish, normalizar: bool = False) -> torch.Tensor:
    """‖real − fake‖²: suma de diferencias cuadradas. Con tensores de 4 dimensiones, promedio sobre el lote."""
    real, fake = _tensor(real), _tensor(fake)
    if real.shape != fake.shape:
        raise ShapeError(f"formas distintas en recon_l2: {tuple(real.shape)} vs {tuple(fake.shape)}")
    return _promedio_por_muestra((real - fake) ** 2, real.dim() == 4, normalizar)


def mask_bce(pred: Tensorish, truth: Tensorish) -> torch.Tensor:
    """Entropía cruzada binaria media sobre los N píxeles, con pred recortado a [ε, 1−ε]."""
    pred = _tensor(pred)
    truth = _tensor(truth).to(pred.dtype)
    if pred.shape != truth.shape:
        raise ShapeError(f"formas distintas en mask_bce: {tuple(pred.shape)} vs {tuple(truth.shape)}")
    if not torch.all((truth == 0) | (truth == 1)):
        raise ValidationError("la máscara de referencia debe ser binaria")
    pred = pred.clamp(EPSILON, 1.0 - EPSILON)
    return -(truth * torch.log(pred) + (1.0 - truth) * torch.log(1.0 - pred)).mean()


def perceptual_loss(fake: Tensorish, real: Tensorish, cfg: PerceptualConfig, normalizar: bool = False) -> torch.Tensor:
    """Σ_{l∈Ω} ‖φ_l(fake) − φ_l(real)‖²."""
    rasgos_fake = perceptual_features(fake, cfg)
    rasgos_real = perceptual_features(real, cfg)
    total = rasgos_fake[0].new_zeros(())
    for a, b in zip(rasgos_fake, rasgos_real):
        total = total + recon_l2(b, a, normalizar)
    return total


def _log_seguro(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(EPSILON, 1.0 - EPSILON))


def _verificar_finito(terminos: Dict[str, torch.Tensor]) -> None:
    for nombre, valor in terminos.items():
        if not torch.isfinite(valor).all():
            logger.error("Término %s no finito: %s", nombre, valor)
            raise NumericalError(f"valor no finito en el término {nombre}", termino=nombre)


# ================================
# OBJETIVOS
# ================================

def objetivo_generador(
    batch: LoteEntrenamiento,
    generator: Generator,
    discriminator: Discriminator,
    weights: LossWeights,
    perceptual: Optional[PerceptualConfig] = None,
) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """Total diferenciable y sus términos. adv_g = −E[log D(G(v_a, v_l))]."""
    imagenes, mascaras = generator(batch.condicion)
    terminos = {
        "adv_g": -_log_seguro(discriminator(imagenes)).mean(),
        "recon_l2": recon_l2(batch.imagenes, imagenes, weights.normalize_losses),
        "mask_bce": mask_bce(mascaras[:, CANAL_CARA], batch.mascaras),
    }
    if weights.lambda3 > 0:
        if perceptual is None:
            raise ConfigError("lambda3 > 0 requiere una red perceptual")
        terminos["perceptual"] = perceptual_loss(imagenes, batch.imagenes, perceptual, weights.normalize_losses)
    else:
        terminos["perceptual"] = imagenes.new_zeros(())
    _verificar_finito(terminos)
    total = (
        weights.lambda1 * terminos["recon_l2"]
        + weights.lambda2 * terminos["mask_bce"]
        + weights.lambda3 * terminos["perceptual"]
    )
    if weights.use_adversarial:
        total = total + terminos["adv_g"]
    return total, terminos


def discriminator_loss(batch: LoteEntrenamiento, g_params: Generator, d_params: Discriminator) -> torch.Tensor:
    """−(E[log D(I_real)] + E[log(1 − D(G(v_a, v_l)))]), con G(·) tratado como constante."""
    with torch.no_grad():
        falsas, _ = g_params(batch.condicion)
    perdida = -(_log_seguro(d_params(batch.imagenes)).mean() + _log_seguro(1.0 - d_params(falsas)).mean())
    _verificar_finito({"adv_d": perdida})
    return perdida


def generator_loss(
    batch: LoteEntrenamiento,
    params: Tuple[Generator, Discriminator],
    weights: LossWeights,
    perceptual: Optional[PerceptualConfig] = None,
) -> LossBreakdown:
    """Evaluación sin gradientes de todos los términos, incluido total_d."""
    generador, discriminador = params
    with torch.no_grad():
        total, terminos = objetivo_generador(batch, generador, discriminador, weights, perceptual)
        total_d = discriminator_loss(batch, generador, discriminador)
    return desglose(terminos, total, total_d)


def desglose(terminos: Dict[str, torch.Tensor], total_g: torch.Tensor, total_d: torch.Tensor) -> LossBreakdown:
    return LossBreakdown(
        adv_g=float(terminos["adv_g"]),
        recon_l2=float(terminos["recon_l2"]),
        mask_bce=float(terminos["mask_bce"]),
        perceptual=float(terminos["perceptual"]),
        total_g=float(total_g),
        total_d=float(total_d),
    )


def total_esperado(breakdown: LossBreakdown, weights: LossWeights) -> float:
    adversarial = breakdown.adv_g if weights.use_adversarial else 0.0
    return (
        adversarial
        + weights.lambda1 * breakdown.recon_l2
        + weights.lambda2 * breakdown.mask_bce
        + weights.lambda3 * breakdown.perceptual
    )


