"""
Aumento de datos para que el generador no memorice las caras de entrenamiento:
distorsión elástica y rotación aleatoria, aplicadas igual a imagen, máscara y landmarks.
"""

import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from scipy import ndimage

from core.dataset import FaceRecord, reduce_landmarks
from core.errores import ConfigError, ValidationError

logger = logging.getLogger(__name__)

AVISO_LANDMARKS_RECORTADOS = "landmarks_recortados"


@dataclass(frozen=True)
class AugmentConfig:
    """Parámetros de aumento. alpha y sigma en píxeles, rango de rotación en grados."""
    elastic_alpha: float = 8.0
    elastic_sigma: float = 6.0
    rotation_range: Tuple[float, float] = (-30.0, 30.0)
    seed: int = 0

    def __post_init__(self):
        if self.elastic_alpha < 0:
            raise ConfigError(f"elastic_alpha debe ser >= 0: {self.elastic_alpha}")
        if self.elastic_sigma <= 0:
            raise ConfigError(f"elastic_sigma debe ser > 0: {self.elastic_sigma}")
        bajo, alto = self.rotation_range
        if not -180.0 <= bajo <= alto <= 180.0:
            raise ConfigError(f"rotation_range debe estar dentro de [-180, 180]: {self.rotation_range}")


def _requiere_anotaciones(record: FaceRecord) -> None:
    if record.mask is None or record.landmarks68 is None:
        raise ValidationError("el aumento requiere máscara y landmarks de 68 puntos")


def _copiar(record: FaceRecord) -> FaceRecord:
    return replace(
        record,
        image=record.image.copy(),
        mask=None if record.mask is None else record.mask.copy(),
        landmarks68=None if record.landmarks68 is None else record.landmarks68.copy(),
    )


def _recortar_landmarks(puntos: np.ndarray, size: Tuple[int, int]) -> Tuple[np.ndarray, bool]:
    alto, ancho = size
    recortados = np.column_stack([np.clip(puntos[:, 0], 0.0, ancho), np.clip(puntos[:, 1], 0.0, alto)])
    return recortados, bool(np.any(recortados != puntos))


def _con_landmarks(record: FaceRecord, imagen: np.ndarray, mascara: np.ndarray, landmarks68: np.ndarray, recortado: bool) -> FaceRecord:
    landmarks = reduce_landmarks(landmarks68, record.tamano)
    avisos = record.avisos
    if recortado or landmarks.clamped:
        logger.warning("Landmark desplazado fuera de la imagen en %s; recortado", record.source_id or "registro")
        avisos = avisos + (AVISO_LANDMARKS_RECORTADOS,)
    return replace(
        record,
        image=imagen,
        mask=mascara,
        landmarks68=landmarks68,
        landmarks=landmarks,
        avisos=avisos,
    )


def _remuestrear(record: FaceRecord, filas: np.ndarray, columnas: np.ndarray, modo: str) -> Tuple[np.ndarray, np.ndarray]:
    """Imagen bilineal, máscara por vecino más cercano, en las coordenadas de índice dadas."""
    coordenadas = np.stack([filas.ravel(), columnas.ravel()])
    alto, ancho = record.tamano
    canales = [
        ndimage.map_coordinates(record.image[..., k], coordenadas, order=1, mode=modo, cval=0.0).reshape(alto, ancho)
        for k in range(3)
    ]
    imagen = np.clip(np.stack(canales, axis=-1), 0.0, 1.0)
    mascara = ndimage.map_coordinates(record.mask.astype(np.float64), coordenadas, order=0, mode=modo, cval=0.0)
    return imagen, (mascara.reshape(alto, ancho) > 0.5).astype(record.mask.dtype)


# ================================
# DISTORSIÓN ELÁSTICA
# ================================

def campo_elastico(size: Tuple[int, int], alpha: float, sigma: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Ruido uniforme en [-1, 1] suavizado con una gaussiana y escalado por alpha; |dx|, |dy| <= alpha."""
    rng = np.random.default_rng(seed)
    dx = ndimage.gaussian_filter(rng.uniform(-1.0, 1.0, size), sigma, mode="constant", cval=0.0) * alpha
    dy = ndimage.gaussian_filter(rng.uniform(-1.0, 1.0, size), sigma, mode="constant", cval=0.0) * alpha
    return dx, dy


def elastic_distortion(record: FaceRecord, alpha: float, sigma: float, seed: int) -> FaceRecord:
    """El píxel de salida p toma la entrada en p + d(p); cada landmark q pasa a q - d(q)."""
    _requiere_anotaciones(record)
    if alpha == 0:
        return _copiar(record)
    alto, ancho = record.tamano
    dx, dy = campo_elastico((alto, ancho), alpha, sigma, seed)
    filas, columnas = np.mgrid[0:alto, 0:ancho].astype(np.float64)
    imagen, mascara = _remuestrear(record, filas + dy, columnas + dx, "reflect")

    puntos = record.landmarks68
    indices = np.stack([puntos[:, 1] - 0.5, puntos[:, 0] - 0.5])
    desplazamiento_x = ndimage.map_coordinates(dx, indices, order=1, mode="nearest")
    desplazamiento_y = ndimage.map_coordinates(dy, indices, order=1, mode="nearest")
    nuevos = puntos - np.column_stack([desplazamiento_x, desplazamiento_y])
    nuevos, recortado = _recortar_landmarks(nuevos, (alto, ancho))
    return _con_landmarks(record, imagen, mascara, nuevos, recortado)


# ================================
# ROTACIÓN
# ================================

def matriz_rotacion(theta_deg: float) -> np.ndarray:
    theta = np.deg2rad(theta_deg)
    return np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])


def rotate_landmarks(puntos: np.ndarray, theta_deg: float, centro: Tuple[float, float]) -> np.ndarray:
    """Rotación 2-D exacta de puntos (N×2) alrededor de `centro`."""
    centro = np.asarray(centro, dtype=np.float64)
    return (np.asarray(puntos, dtype=np.float64) - centro) @ matriz_rotacion(theta_deg).T + centro


def rotar_registro(record: FaceRecord, theta_deg: float) -> FaceRecord:
    """Rota imagen (bilineal, relleno con ceros), máscara (vecino más cercano) y landmarks (analítico)."""
    _requiere_anotaciones(record)
    if theta_deg == 0:
        return _copiar(record)
    alto, ancho = record.tamano
    centro = np.array([ancho / 2.0, alto / 2.0])
    xs, ys = np.meshgrid(np.arange(ancho) + 0.5, np.arange(alto) + 0.5)
    salida = np.stack([xs.ravel(), ys.ravel()], axis=1)
    # muestreo inverso: la salida p viene de R(-θ)(p - c) + c
    origen = rotate_landmarks(salida, -theta_deg, centro)
    filas = (origen[:, 1] - 0.5).reshape(alto, ancho)
    columnas = (origen[:, 0] - 0.5).reshape(alto, ancho)
    imagen, mascara = _remuestrear(record, filas, columnas, "constant")
    nuevos = rotate_landmarks(record.landmarks68, theta_deg, centro)
    return _con_landmarks(record, imagen, mascara, nuevos, False)


def random_rotation(record: FaceRecord, range_deg: Tuple[float, float], seed: int) -> FaceRecord:
    bajo, alto = range_deg
    if bajo == alto:
        theta = float(bajo)
    else:
        theta = float(np.random.default_rng(seed).uniform(bajo, alto))
    return rotar_registro(record, theta)


# ================================
# COMPOSICIÓN
# ================================

def semillas_de_registro(semilla_raiz: int, indice: int) -> Tuple[int, int]:
    """Semillas independientes (elástica, rotación) derivadas de la raíz y el índice del registro."""
    estado = np.random.SeedSequence([int(semilla_raiz), int(indice)]).generate_state(2)
    return int(estado[0]), int(estado[1])


def augment_record(record: FaceRecord, cfg: AugmentConfig, indice: int) -> FaceRecord:
    semilla_elastica, semilla_rotacion = semillas_de_registro(cfg.seed, indice)
    distorsionado = elastic_distortion(record, cfg.elastic_alpha, cfg.elastic_sigma, semilla_elastica)
    return random_rotation(distorsionado, cfg.rotation_range, semilla_rotacion)
