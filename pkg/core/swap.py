"""
Intercambio de cara: mezcla en el dominio del gradiente (clonado sin costuras) de la cara generada
sobre la imagen original.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.sparse
from scipy import ndimage
from scipy.sparse.linalg import cg

from core.dataset import FaceRecord, ImageTensor, MaskTensor
from core.errores import BoundaryError, ConfigError, ShapeError, SwapError
from core.model import CANAL_CARA

logger = logging.getLogger(__name__)

TOLERANCIA_RESIDUO = 1e-4
MAX_ITERACIONES = 10_000
LADO_MAXIMO_DIRECTO = 32

# (fila, columna) de los 4 vecinos
VECINOS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass
class BlendResult:
    image: ImageTensor
    converged: bool
    residual: float
    iterations: int


def _validar(source: ImageTensor, target: ImageTensor, mask: MaskTensor) -> np.ndarray:
    if source.shape != target.shape:
        raise ShapeError(f"source {source.shape} y target {target.shape} deben tener la misma forma")
    if mask.shape != target.shape[:2]:
        raise ShapeError(f"máscara {mask.shape} no coincide con la imagen {target.shape[:2]}")
    region = np.asarray(mask).astype(bool)
    if not region.any():
        raise SwapError("la máscara está vacía")
    if region[0, :].any() or region[-1, :].any() or region[:, 0].any() or region[:, -1].any():
        raise BoundaryError("la máscara toca el borde de la imagen")
    return region


def laplaciano(imagen: np.ndarray) -> np.ndarray:
    """Laplaciano discreto de 5 puntos 4·f(p) − Σ f(q), válido en píxeles interiores."""
    resultado = 4.0 * imagen
    for df, dc in VECINOS:
        resultado -= np.roll(imagen, shift=(-df, -dc), axis=(0, 1))
    return resultado


def sistema_poisson(region: np.ndarray) -> Tuple[scipy.sparse.csr_matrix, np.ndarray]:
    """Matriz del sistema sobre las incógnitas de la región y el índice de cada píxel."""
    indices = -np.ones(region.shape, dtype=np.int64)
    filas, columnas = np.nonzero(region)
    total = filas.size
    indices[filas, columnas] = np.arange(total)
    i_filas = [np.arange(total)]
    i_columnas = [np.arange(total)]
    valores = [np.full(total, 4.0)]
    for df, dc in VECINOS:
        vecinos = indices[filas + df, columnas + dc]
        dentro = vecinos >= 0
        i_filas.append(np.arange(total)[dentro])
        i_columnas.append(vecinos[dentro])
        valores.append(-np.ones(int(dentro.sum())))
    matriz = scipy.sparse.coo_matrix(
        (np.concatenate(valores), (np.concatenate(i_filas), np.concatenate(i_columnas))),
        shape=(total, total),
    ).tocsr()
    return matriz, indices


def lado_derecho(source: np.ndarray, target: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Δsource en la región más los valores de target en los vecinos fuera de ella (Dirichlet)."""
    filas, columnas = np.nonzero(region)
    b = laplaciano(source)[filas, columnas]
    for df, dc in VECINOS:
        vf, vc = filas + df, columnas + dc
        afuera = ~region[vf, vc]
        b[afuera] += target[vf[afuera], vc[afuera]]
    return b


def poisson_blend(
    source: ImageTensor,
    target: ImageTensor,
    mask: MaskTensor,
    tolerancia: float = TOLERANCIA_RESIDUO,
    max_iteraciones: int = MAX_ITERACIONES,
) -> BlendResult:
    """
    Resuelve por canal Δu = Δsource dentro de la máscara con u = target fuera de ella (gradiente conjugado).
    Sin convergencia devuelve la mejor iteración con converged=False.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    region = _validar(source, target, mask)
    matriz, _ = sistema_poisson(region)
    filas, columnas = np.nonzero(region)
    salida = target.copy()
    residuo_maximo = 0.0
    iteraciones_totales = 0
    for canal in range(target.shape[2]):
        b = lado_derecho(source[..., canal], target[..., canal], region)
        contador = [0]

        def contar(_):
            contador[0] += 1

        # la tolerancia del gradiente conjugado es en norma 2; se ajusta para acotar el error por píxel
        u, _ = cg(
            matriz,
            b,
            x0=target[filas, columnas, canal],
            rtol=0.0,
            atol=tolerancia * 1e-3,
            maxiter=max_iteraciones,
            callback=contar,
        )
        residuo_maximo = max(residuo_maximo, float(np.max(np.abs(matriz @ u - b))))
        iteraciones_totales = max(iteraciones_totales, contador[0])
        salida[filas, columnas, canal] = u
    convergio = residuo_maximo <= tolerancia
    if not convergio:
        logger.warning(
            "Poisson sin converger: residuo %.3e tras %d iteraciones", residuo_maximo, iteraciones_totales
        )
    return BlendResult(
        image=np.clip(salida, 0.0, 1.0),
        converged=convergio,
        residual=residuo_maximo,
        iterations=iteraciones_totales,
    )


def resolver_directo(source: ImageTensor, target: ImageTensor, mask: MaskTensor) -> ImageTensor:
    """Solución densa exacta del mismo sistema, armado píxel por píxel; solo para imágenes chicas."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    region = _validar(source, target, mask)
    if max(region.shape) > LADO_MAXIMO_DIRECTO:
        raise ConfigError(f"el solver directo admite hasta {LADO_MAXIMO_DIRECTO}×{LADO_MAXIMO_DIRECTO}")
    pixeles = list(zip(*np.nonzero(region)))
    posicion = {p: i for i, p in enumerate(pixeles)}
    matriz = np.zeros((len(pixeles), len(pixeles)))
    salida = target.copy()
    for canal in range(target.shape[2]):
        b = np.zeros(len(pixeles))
        for i, (f, c) in enumerate(pixeles):
            matriz[i, i] = 4.0
            b[i] = 4.0 * source[f, c, canal]
            for df, dc in VECINOS:
                vecino = (f + df, c + dc)
                b[i] -= source[vecino + (canal,)]
                if vecino in posicion:
                    matriz[i, posicion[vecino]] = -1.0
                else:
                    b[i] += target[vecino + (canal,)]
        u = np.linalg.solve(matriz, b)
        for i, (f, c) in enumerate(pixeles):
            salida[f, c, canal] = u[i]
    return np.clip(salida, 0.0, 1.0)


def mascara_de_intercambio(gen_mask: MaskTensor) -> np.ndarray:
    """Canal cara > 0.5, erosionado 1 píxel y sin tocar el borde."""
    probabilidades = np.asarray(gen_mask)
    cara = probabilidades[..., CANAL_CARA] if probabilidades.ndim == 3 else probabilidades
    binaria = ndimage.binary_erosion(cara > 0.5, iterations=1, border_value=0)
    binaria[0, :] = binaria[-1, :] = False
    binaria[:, 0] = binaria[:, -1] = False
    return binaria


def swap_face(record: FaceRecord, generated: ImageTensor, gen_mask: MaskTensor) -> ImageTensor:
    if generated.shape != record.image.shape:
        raise ShapeError(f"cara generada {generated.shape} y registro {record.image.shape} difieren")
    region = mascara_de_intercambio(gen_mask)
    if not region.any():
        raise SwapError(f"máscara generada vacía para {record.source_id or 'el registro'}")
    resultado = poisson_blend(generated, record.image, region)
    return resultado.image
