"""
Métodos clásicos de obscuración: desenfoque gaussiano, pixelado, k-same (cara promedio
por cluster) y gris sobre la región facial.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from scipy import ndimage

from core.dataset import FaceRecord, ImageTensor, MaskTensor
from core.errores import ConfigError, ShapeError

logger = logging.getLogger(__name__)

K_POR_DEFECTO = 10


# ================================
# DESENFOQUE GAUSSIANO
# ================================

def sigma_de_kernel(kernel_size: int) -> float:
    """σ = 0.3·((k − 1)/2 − 1) + 0.8."""
    return 0.3 * ((kernel_size - 1) / 2.0 - 1.0) + 0.8


def radio_de_kernel(kernel_size: int) -> int:
    if kernel_size < 3 or kernel_size % 2 == 0:
        raise ConfigError(f"kernel_size debe ser impar y >= 3: {kernel_size}")
    return (kernel_size - 1) // 2


def gaussian_blur(image: ImageTensor, kernel_size: int) -> ImageTensor:
    """Filtro gaussiano truncado al kernel k×k, con bordes reflejados (d c b a | a b c d)."""
    radio = radio_de_kernel(kernel_size)
    sigma = sigma_de_kernel(kernel_size)
    salida = ndimage.gaussian_filter(
        np.asarray(image, dtype=np.float64),
        sigma=(sigma, sigma, 0.0),
        mode="reflect",
        truncate=radio / sigma,
    )
    return np.clip(salida, 0.0, 1.0)


# ================================
# PIXELADO
# ================================

def pixelate(image: ImageTensor, block_size: int) -> ImageTensor:
    """Cada bloque block_size×block_size (los del borde pueden ser más chicos) toma su color medio."""
    if block_size < 2:
        raise ConfigError(f"block_size debe ser >= 2: {block_size}")
    imagen = np.asarray(image, dtype=np.float64)
    alto, ancho = imagen.shape[:2]
    if block_size > min(alto, ancho):
        logger.warning("Bloque %d mayor que la imagen %dx%d; se usa la media global", block_size, alto, ancho)
        return np.broadcast_to(imagen.mean(axis=(0, 1)), imagen.shape).copy()
    inicios_filas = np.arange(0, alto, block_size)
    inicios_columnas = np.arange(0, ancho, block_size)
    sumas = np.add.reduceat(np.add.reduceat(imagen, inicios_filas, axis=0), inicios_columnas, axis=1)
    alto_bloques = np.diff(np.append(inicios_filas, alto))
    ancho_bloques = np.diff(np.append(inicios_columnas, ancho))
    medias = sumas / np.multiply.outer(alto_bloques, ancho_bloques)[..., None]
    return np.repeat(np.repeat(medias, alto_bloques, axis=0), ancho_bloques, axis=1)


# ================================
# GRIS
# ================================

def gray_out(image: ImageTensor, mask: MaskTensor, value: float = 0.5) -> ImageTensor:
    """Reemplaza la región facial por un gris uniforme."""
    if mask.shape != image.shape[:2]:
        raise ShapeError(f"máscara {mask.shape} no coincide con la imagen {image.shape[:2]}")
    salida = np.array(image, dtype=np.float64)
    salida[mask.astype(bool)] = value
    return salida


# ================================
# K-SAME
# ================================

@dataclass(frozen=True)
class KSameConfig:
    k: int = K_POR_DEFECTO

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"k debe ser >= 2: {self.k}")


@dataclass
class KSameResult:
    """Sustituto por índice de registro y la partición que lo produjo."""
    surrogates: List[ImageTensor]
    clusters: List[List[int]]
    k: int
    cluster_de: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.cluster_de:
            self.cluster_de = {i: c for c, miembros in enumerate(self.clusters) for i in miembros}


def agrupar_k_same(caracteristicas: np.ndarray, k: int) -> List[List[int]]:
    """
    Agrupamiento goloso: se toma el primer registro sin asignar y sus k−1 vecinos más cercanos
    sin asignar; si quedan menos de k, se suman al último cluster. Determinista dado el orden.
    """
    total = caracteristicas.shape[0]
    sin_asignar = list(range(total))
    clusters: List[List[int]] = []
    while sin_asignar:
        if len(sin_asignar) < k:
            clusters[-1].extend(sin_asignar)
            break
        semilla = sin_asignar[0]
        candidatos = np.array(sin_asignar[1:])
        distancias = np.linalg.norm(caracteristicas[candidatos] - caracteristicas[semilla], axis=1)
        vecinos = candidatos[np.argsort(distancias, kind="stable")[: k - 1]]
        cluster = [semilla] + sorted(int(v) for v in vecinos)
        clusters.append(cluster)
        elegidos = set(cluster)
        sin_asignar = [i for i in sin_asignar if i not in elegidos]
    return clusters


def k_same(corpus: Sequence[FaceRecord], cfg: KSameConfig) -> KSameResult:
    registros = list(corpus)
    if len(registros) < cfg.k:
        raise ConfigError(f"k-same necesita al menos k={cfg.k} registros, hay {len(registros)}")
    formas = {r.image.shape for r in registros}
    if len(formas) != 1:
        raise ShapeError(f"k-same requiere imágenes alineadas del mismo tamaño: {sorted(formas)}")
    caracteristicas = np.stack([r.vector_condicion() for r in registros])
    clusters = agrupar_k_same(caracteristicas, cfg.k)
    surrogates: List[ImageTensor] = [None] * len(registros)
    for miembros in clusters:
        promedio = np.mean([registros[i].image for i in miembros], axis=0)
        for i in miembros:
            surrogates[i] = promedio
    logger.info("k-same: %d registros en %d clusters (k=%d)", len(registros), len(clusters), cfg.k)
    return KSameResult(surrogates=surrogates, clusters=clusters, k=cfg.k)
