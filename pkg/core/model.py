"""
Redes de UP-GAN: generador condicionado por (v_a, v_l), discriminador y la red de identidad
cuyas activaciones definen la pérdida perceptual (y las características de FID).
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from core.dataset import DIM_ATRIBUTOS, DIM_LANDMARKS, AttributeVector, LandmarkVector
from core.errores import ConfigError, CorpusError, ShapeError, TrainingError

logger = logging.getLogger(__name__)

DIM_CONDICION = DIM_ATRIBUTOS + DIM_LANDMARKS
LADO_INICIAL = 4
CANAL_CARA = 1


# ================================
# CONFIGURACIÓN
# ================================

@dataclass(frozen=True)
class ModelConfig:
    """Anchos y tamaño de salida. Todas las formas intermedias son función de esta configuración."""
    image_size: int = 128
    fc_hidden: int = 1024
    base_channels: int = 512
    disc_base_channels: int = 32
    disc_max_channels: int = 512
    leaky_slope: float = 0.2

    def __post_init__(self):
        bloques = math.log2(self.image_size / LADO_INICIAL) if self.image_size >= 2 * LADO_INICIAL else 0
        if bloques < 1 or not float(bloques).is_integer():
            raise ConfigError(f"image_size debe ser {LADO_INICIAL}·2^n con n >= 1: {self.image_size}")
        if self.base_channels >> int(bloques) < 1:
            raise ConfigError(f"base_channels={self.base_channels} no alcanza para {int(bloques)} bloques")

    @property
    def num_blocks(self) -> int:
        return int(math.log2(self.image_size // LADO_INICIAL))

    def canales_generador(self) -> List[int]:
        """Canales del mapa 4×4 seguidos de la salida de cada bloque (se divide por 2 en cada uno)."""
        return [self.base_channels >> i for i in range(self.num_blocks + 1)]

    def canales_discriminador(self) -> List[int]:
        return [min(self.disc_base_channels << i, self.disc_max_channels) for i in range(self.num_blocks)]

    @classmethod
    def para_escala(cls, scale: int) -> "ModelConfig":
        """128 y 32 usan los anchos completos; 8 es la configuración mínima para chequeos de gradiente."""
        if scale == 8:
            return cls(image_size=8, fc_hidden=16, base_channels=8, disc_base_channels=4, disc_max_channels=8)
        return cls(image_size=scale)

    def como_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class IdentityNetConfig:
    """Red de identificación pequeña: bloques conv 3×3 + pooling promedio, capa penúltima y clasificador."""
    canales: Tuple[int, ...] = (16, 32, 64, 64)
    dim_penultima: int = 32
    num_clases: int = 2
    leaky_slope: float = 0.2

    def como_dict(self) -> dict:
        datos = asdict(self)
        datos["canales"] = list(self.canales)
        return datos

    @classmethod
    def para_escala(cls, scale: int, num_clases: int) -> "IdentityNetConfig":
        if scale <= 8:
            return cls(canales=(4, 4), dim_penultima=8, num_clases=num_clases)
        return cls(num_clases=num_clases)


# ================================
# GENERADOR
# ================================

class BloqueDeconv(nn.Module):
    """Upsampling ×2 + conv k=5 (la "deconvolución"), seguida de una conv k=3."""

    def __init__(self, entrada: int, salida: int):
        super().__init__()
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")
        self.conv5 = nn.Conv2d(entrada, salida, kernel_size=5, padding=2)
        self.conv3 = nn.Conv2d(salida, salida, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.conv5(self.upsample(x)))
        return F.relu(self.conv3(x))


class Generator(nn.Module):
    """concat(v_a, v_l) → FC → FC → 4×4 → bloques deconv → max pool stride 1 → cabezas imagen y máscara."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        canales = cfg.canales_generador()
        self.fc1 = nn.Linear(DIM_CONDICION, cfg.fc_hidden)
        self.fc2 = nn.Linear(cfg.fc_hidden, LADO_INICIAL * LADO_INICIAL * canales[0])
        self.blocks = nn.ModuleList(BloqueDeconv(a, b) for a, b in zip(canales[:-1], canales[1:]))
        self.pool = nn.MaxPool2d(kernel_size=3, stride=1, padding=1)
        self.head_image = nn.Conv2d(canales[-1], 3, kernel_size=3, padding=1)
        self.head_mask = nn.Conv2d(canales[-1], 2, kernel_size=3, padding=1)

    def _validar(self, condicion: torch.Tensor) -> None:
        if condicion.dim() != 2 or condicion.shape[1] != DIM_CONDICION:
            raise ShapeError(f"la condición debe ser B×{DIM_CONDICION}, es {tuple(condicion.shape)}")

    def forward(self, condicion: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        self._validar(condicion)
        x = F.relu(self.fc1(condicion))
        x = F.relu(self.fc2(x))
        x = x.view(-1, self.cfg.base_channels, LADO_INICIAL, LADO_INICIAL)
        for bloque in self.blocks:
            x = bloque(x)
        x = self.pool(x)
        imagen = torch.sigmoid(self.head_image(x))
        mascara = torch.softmax(self.head_mask(x), dim=1)
        return imagen, mascara

    def trazar_formas(self, condicion: torch.Tensor) -> List[Tuple[int, ...]]:
        """Formas de cada activación intermedia, en orden; para el test de la progresión 4→…→S."""
        self._validar(condicion)
        formas = []
        x = F.relu(self.fc1(condicion))
        formas.append(tuple(x.shape))
        x = F.relu(self.fc2(x)).view(-1, self.cfg.base_channels, LADO_INICIAL, LADO_INICIAL)
        formas.append(tuple(x.shape))
        for bloque in self.blocks:
            x = bloque(x)
            formas.append(tuple(x.shape))
        x = self.pool(x)
        formas.append(tuple(x.shape))
        formas.append(tuple(self.head_image(x).shape))
        formas.append(tuple(self.head_mask(x).shape))
        return formas


# ================================
# DISCRIMINADOR
# ================================

class Discriminator(nn.Module):
    """Convoluciones k=4 con stride 2 (espejo del generador) y una cabeza sigmoide escalar."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        canales = cfg.canales_discriminador()
        capas: List[nn.Module] = []
        entrada = 3
        for salida in canales:
            capas.append(nn.Conv2d(entrada, salida, kernel_size=4, stride=2, padding=1))
            capas.append(nn.LeakyReLU(cfg.leaky_slope))
            entrada = salida
        self.conv_blocks = nn.Sequential(*capas)
        self.classifier = nn.Linear(entrada * LADO_INICIAL * LADO_INICIAL, 1)

    def forward(self, imagen: torch.Tensor) -> torch.Tensor:
        """Probabilidad de ser real, forma (B,)."""
        esperado = (3, self.cfg.image_size, self.cfg.image_size)
        if imagen.dim() != 4 or tuple(imagen.shape[1:]) != esperado:
            raise ShapeError(f"el discriminador espera B×{esperado}, recibió {tuple(imagen.shape)}")
        x = self.conv_blocks(imagen).flatten(1)
        return torch.sigmoid(self.classifier(x)).squeeze(1)


# ================================
# RED DE IDENTIDAD (PERCEPTUAL)
# ================================

class IdentityNet(nn.Module):
    def __init__(self, cfg: IdentityNetConfig):
        super().__init__()
        self.cfg = cfg
        bloques = []
        entrada = 3
        for salida in cfg.canales:
            bloques.append(nn.Sequential(
                nn.Conv2d(entrada, salida, kernel_size=3, padding=1),
                nn.LeakyReLU(cfg.leaky_slope),
                nn.AvgPool2d(2),
            ))
            entrada = salida
        self.bloques = nn.ModuleList(bloques)
        self.resumen = nn.AdaptiveAvgPool2d(2)
        self.penultima = nn.Linear(entrada * 4, cfg.dim_penultima)
        self.clasificador = nn.Linear(cfg.dim_penultima, cfg.num_clases)

    def activaciones(self, x: torch.Tensor) -> List[torch.Tensor]:
        salidas = []
        for bloque in self.bloques:
            x = bloque(x)
            salidas.append(x)
        return salidas

    def embedding(self, x: torch.Tensor) -> torch.Tensor:
        for bloque in self.bloques:
            x = bloque(x)
        x = self.resumen(x).flatten(1)
        return F.leaky_relu(self.penultima(x), self.cfg.leaky_slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.clasificador(self.embedding(x))


@dataclass
class PerceptualConfig:
    """Red φ congelada y el conjunto Ω de bloques cuyas activaciones se comparan."""
    network: IdentityNet
    layer_set: Tuple[int, ...] = (0, 1, 2, 3)
    identidades: List[str] = field(default_factory=list)
    precision: Optional[float] = None

    def __post_init__(self):
        self.layer_set = tuple(int(l) for l in self.layer_set)
        if not self.layer_set:
            raise ConfigError("el conjunto de capas Ω no puede estar vacío")
        total = len(self.network.bloques)
        invalidas = [l for l in self.layer_set if not 0 <= l < total]
        if invalidas:
            raise ConfigError(f"capas inválidas {invalidas}; la red tiene {total} bloques")
        congelar(self.network)


def congelar(red: nn.Module) -> nn.Module:
    red.eval()
    for parametro in red.parameters():
        parametro.requires_grad_(False)
    return red


# ================================
# CONVERSIONES
# ================================

def a_tensor(imagenes: Union[np.ndarray, Sequence[np.ndarray], torch.Tensor], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """H×W×3 (o lista, o B×H×W×3) en numpy → B×3×H×W. Los tensores de torch pasan sin cambios."""
    if isinstance(imagenes, torch.Tensor):
        return imagenes if imagenes.dim() == 4 else imagenes.unsqueeze(0)
    arreglo = np.asarray(imagenes if isinstance(imagenes, np.ndarray) else np.stack(imagenes), dtype=np.float64)
    if arreglo.ndim == 3:
        arreglo = arreglo[None]
    if arreglo.ndim != 4 or arreglo.shape[-1] != 3:
        raise ShapeError(f"se esperaban imágenes H×W×3, forma {arreglo.shape}")
    return torch.from_numpy(arreglo.transpose(0, 3, 1, 2).copy()).to(dtype)


def a_numpy(imagenes: torch.Tensor) -> np.ndarray:
    """B×C×H×W → B×H×W×C en float64."""
    return imagenes.detach().cpu().double().numpy().transpose(0, 2, 3, 1)


def redimensionar(imagenes: torch.Tensor, tamano: int) -> torch.Tensor:
    if imagenes.shape[-1] == tamano and imagenes.shape[-2] == tamano:
        return imagenes
    return F.interpolate(imagenes, size=(tamano, tamano), mode="area")


def condicion_de(v_a: Union[AttributeVector, np.ndarray], v_l: Union[LandmarkVector, np.ndarray]) -> np.ndarray:
    atributos = v_a.as_array() if isinstance(v_a, AttributeVector) else np.asarray(v_a, dtype=np.float64).reshape(-1)
    landmarks = v_l.as_array() if isinstance(v_l, LandmarkVector) else np.asarray(v_l, dtype=np.float64).reshape(-1)
    if atributos.shape[0] != DIM_ATRIBUTOS or landmarks.shape[0] != DIM_LANDMARKS:
        raise ShapeError(
            f"dimensiones de entrada {atributos.shape[0]} y {landmarks.shape[0]}; se esperaban {DIM_ATRIBUTOS} y {DIM_LANDMARKS}"
        )
    return np.concatenate([atributos, landmarks])


def _dtype_de(modulo: nn.Module) -> torch.dtype:
    return next(modulo.parameters()).dtype


# ================================
# OPERACIONES
# ================================

def generator_forward(
    v_a: Union[AttributeVector, np.ndarray],
    v_l: Union[LandmarkVector, np.ndarray],
    params: Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Inferencia pura: imagen S×S×3 en [0,1] y probabilidades de máscara S×S×2."""
    condicion = condicion_de(v_a, v_l)
    with torch.no_grad():
        entrada = torch.from_numpy(condicion[None]).to(_dtype_de(params))
        imagen, mascara = params(entrada)
    return a_numpy(imagen)[0], a_numpy(mascara)[0]


def discriminator_forward(image: Union[np.ndarray, torch.Tensor], params: Discriminator) -> float:
    with torch.no_grad():
        entrada = a_tensor(image, _dtype_de(params))
        return float(params(entrada)[0])


def perceptual_features(image: Union[np.ndarray, torch.Tensor], cfg: PerceptualConfig) -> List[torch.Tensor]:
    """Activaciones φ_l para cada l ∈ Ω, en el orden de Ω."""
    entrada = a_tensor(image, _dtype_de(cfg.network))
    activaciones = cfg.network.activaciones(entrada)
    try:
        return [activaciones[l] for l in cfg.layer_set]
    except IndexError:
        raise ConfigError(f"Ω={cfg.layer_set} fuera de rango para {len(activaciones)} bloques")


def construir_modelos(cfg: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> Tuple[Generator, Discriminator]:
    torch.manual_seed(seed)
    generador = Generator(cfg).to(dtype)
    discriminador = Discriminator(cfg).to(dtype)
    logger.info(
        "Modelos construidos (S=%d): G=%d parámetros, D=%d parámetros",
        cfg.image_size,
        contar_parametros(generador),
        contar_parametros(discriminador),
    )
    return generador, discriminador


def contar_parametros(modulo: nn.Module) -> int:
    return sum(p.numel() for p in modulo.parameters())


# ================================
# ENTRENAMIENTO DE CLASIFICADORES DE IDENTIDAD
# ================================

def entrenar_clasificador(
    imagenes: torch.Tensor,
    etiquetas: torch.Tensor,
    cfg: IdentityNetConfig,
    epochs: int,
    seed: int,
    lr: float = 1e-3,
    batch_size: int = 32,
) -> Tuple[IdentityNet, float]:
    """Adam + entropía cruzada, barajado con generador sembrado. Devuelve la red y su precisión de entrenamiento."""
    torch.manual_seed(seed)
    red = IdentityNet(cfg).to(imagenes.dtype)
    optimizador = torch.optim.Adam(red.parameters(), lr=lr)
    generador = torch.Generator().manual_seed(seed)
    total = imagenes.shape[0]
    for epoch in range(epochs):
        red.train()
        orden = torch.randperm(total, generator=generador)
        perdida_acumulada = 0.0
        for inicio in range(0, total, batch_size):
            indices = orden[inicio:inicio + batch_size]
            perdida = F.cross_entropy(red(imagenes[indices]), etiquetas[indices])
            optimizador.zero_grad()
            perdida.backward()
            optimizador.step()
            perdida_acumulada += float(perdida) * len(indices)
        logger.debug("Clasificador epoch %d: pérdida %.4f", epoch + 1, perdida_acumulada / total)
    red.eval()
    with torch.no_grad():
        predicciones = torch.cat([
            red(imagenes[i:i + batch_size]).argmax(dim=1) for i in range(0, total, batch_size)
        ])
    precision = float((predicciones == etiquetas).double().mean())
    return red, precision


def pretrain_perceptual(
    corpus: Sequence,
    epochs: int,
    seed: int,
    tamano: Optional[int] = None,
    layer_set: Optional[Sequence[int]] = None,
    precision_objetivo: float = 0.9,
    net_cfg: Optional[IdentityNetConfig] = None,
) -> PerceptualConfig:
    """Entrena φ como clasificador de identidades sobre el corpus etiquetado y registra Ω."""
    etiquetas_txt = [r.identity for r in corpus]
    if any(e is None for e in etiquetas_txt):
        raise CorpusError("pretrain_perceptual requiere identidades en todos los registros")
    identidades = sorted(set(etiquetas_txt))
    conteos = [etiquetas_txt.count(i) for i in identidades]
    if len(identidades) < 2 or min(conteos) < 2:
        raise CorpusError("se necesitan al menos 2 identidades con al menos 2 imágenes cada una")
    imagenes = a_tensor([r.image for r in corpus])
    tamano = tamano or imagenes.shape[-1]
    imagenes = redimensionar(imagenes, tamano)
    etiquetas = torch.tensor([identidades.index(e) for e in etiquetas_txt])
    cfg = net_cfg or IdentityNetConfig.para_escala(tamano, len(identidades))
    red, precision = entrenar_clasificador(imagenes, etiquetas, cfg, epochs, seed)
    logger.info("Red perceptual preentrenada: precisión de entrenamiento %.3f", precision)
    if precision < precision_objetivo:
        raise TrainingError(
            f"la red perceptual no alcanzó {precision_objetivo:.2f} en {epochs} epochs (precisión {precision:.3f})",
            precision=precision,
        )
    capas = tuple(layer_set) if layer_set is not None else tuple(range(min(4, len(cfg.canales))))
    return PerceptualConfig(network=red, layer_set=capas, identidades=identidades, precision=precision)
