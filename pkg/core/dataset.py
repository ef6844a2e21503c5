"""
Corpus de caras anotadas: lectura estilo UTKFace, reducción de landmarks 68 → 7,
máscaras de verdad de terreno y un corpus sintético determinista para pruebas de escritorio.

Convención de coordenadas: el píxel (fila r, columna c) tiene su centro en (x, y) = (c + 0.5, r + 0.5).
Los landmarks normalizados son x / W, y / H.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from PIL import Image
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from core.errores import AnnotationError, CorpusError, ParseError, ValidationError

logger = logging.getLogger(__name__)

ImageTensor = np.ndarray
MaskTensor = np.ndarray

TAMANO_IMAGEN = 128
EDAD_MAXIMA = 116
CATEGORIAS_TONO = 5
NUM_LANDMARKS = 68
DIM_ATRIBUTOS = 3
DIM_LANDMARKS = 14

# Índices iBUG de los 7 puntos conservados
OJO_IZQUIERDO = tuple(range(36, 42))
OJO_DERECHO = tuple(range(42, 48))
NARIZ = 30
BOCA_IZQUIERDA = 48
BOCA_SUPERIOR = 51
BOCA_DERECHA = 54
BOCA_INFERIOR = 57

EXTENSIONES_IMAGEN = (".png", ".jpg", ".jpeg")
FORMATOS_CORPUS = ("utkface", "synthetic-manifest")
NOMBRE_MANIFIESTO = "manifest.yaml"


# ================================
# TIPOS DEL DOMINIO
# ================================

@dataclass(frozen=True)
class AttributeVector:
    """Utilidad estática: edad, género y tono de piel, todos en [0, 1]."""
    age: float
    gender: int
    skin_tone: float

    def __post_init__(self):
        if not 0.0 <= self.age <= 1.0:
            raise ValidationError(f"edad normalizada fuera de [0,1]: {self.age}")
        if self.gender not in (0, 1):
            raise ValidationError(f"género debe ser 0 o 1: {self.gender}")
        if not 0.0 <= self.skin_tone <= 1.0:
            raise ValidationError(f"tono de piel fuera de [0,1]: {self.skin_tone}")

    def as_array(self) -> np.ndarray:
        return np.array([self.age, float(self.gender), self.skin_tone], dtype=np.float64)

    @classmethod
    def from_array(cls, valores: Sequence[float]) -> "AttributeVector":
        valores = [float(v) for v in valores]
        if len(valores) != DIM_ATRIBUTOS:
            raise ValidationError(f"el vector de atributos debe tener {DIM_ATRIBUTOS} componentes, tiene {len(valores)}")
        if valores[1] not in (0.0, 1.0):
            raise ValidationError(f"género debe ser exactamente 0 o 1: {valores[1]}")
        return cls(age=valores[0], gender=int(valores[1]), skin_tone=valores[2])


@dataclass(frozen=True, eq=False)
class LandmarkVector:
    """Utilidad dinámica: 7 puntos (x, y) normalizados, aplanados a 14 reales."""
    points: np.ndarray
    clamped: bool = False

    def __post_init__(self):
        puntos = np.asarray(self.points, dtype=np.float64).reshape(-1)
        if puntos.shape[0] != DIM_LANDMARKS:
            raise ValidationError(f"el vector de landmarks debe tener {DIM_LANDMARKS} componentes, tiene {puntos.shape[0]}")
        if np.any(puntos < 0.0) or np.any(puntos > 1.0):
            raise ValidationError("landmarks fuera de [0,1]")
        object.__setattr__(self, "points", puntos)

    def as_array(self) -> np.ndarray:
        return self.points.copy()

    def as_pairs(self) -> np.ndarray:
        return self.points.reshape(7, 2)


@dataclass(eq=False)
class FaceRecord:
    """Unidad de todos los pipelines: imagen + utilidad + máscara + identidad opcional."""
    image: ImageTensor
    attributes: AttributeVector
    landmarks: LandmarkVector
    landmarks68: Optional[np.ndarray] = None
    mask: Optional[MaskTensor] = None
    identity: Optional[str] = None
    source_id: str = ""
    avisos: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValidationError(f"la imagen debe ser H×W×3, es {self.image.shape}")
        if self.mask is not None and self.mask.shape != self.image.shape[:2]:
            raise ValidationError(f"máscara {self.mask.shape} no coincide con la imagen {self.image.shape[:2]}")

    @property
    def tamano(self) -> Tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]

    def vector_condicion(self) -> np.ndarray:
        """Concatenación (v_a, v_l), 17 dimensiones."""
        return np.concatenate([self.attributes.as_array(), self.landmarks.as_array()])


@dataclass(frozen=True)
class EntradaSintetica:
    """Una fila del manifiesto del corpus sintético."""
    archivo: str
    identidad: str
    semilla: int
    atributos: Tuple[float, float, float]
    plantilla: int

    def como_dict(self) -> dict:
        return {
            "archivo": self.archivo,
            "identidad": self.identidad,
            "semilla": self.semilla,
            "atributos": [float(a) for a in self.atributos],
            "plantilla": self.plantilla,
        }


# ================================
# LECTURA DE ANOTACIONES
# ================================

def parse_filename(
    filename: str,
    edad_maxima: int = EDAD_MAXIMA,
    categorias_tono: int = CATEGORIAS_TONO,
) -> AttributeVector:
    """Decodifica `<edad>_<género>_<raza>_*.<ext>` en un AttributeVector normalizado."""
    nombre = Path(filename).name
    base = nombre.rsplit(".", 1)[0] if "." in nombre else nombre
    partes = base.split("_")
    if len(partes) < 4:
        raise ParseError(f"nombre '{nombre}' no sigue <edad>_<género>_<raza>_*", token=base)
    edad_txt, genero_txt, raza_txt = partes[0], partes[1], partes[2]
    try:
        edad = int(edad_txt)
    except ValueError:
        raise ParseError(f"edad inválida '{edad_txt}' en '{nombre}'", token=edad_txt)
    if not 0 <= edad <= edad_maxima:
        raise ParseError(f"edad '{edad_txt}' fuera de [0,{edad_maxima}] en '{nombre}'", token=edad_txt)
    if genero_txt not in ("0", "1"):
        raise ParseError(f"género inválido '{genero_txt}' en '{nombre}'", token=genero_txt)
    try:
        raza = int(raza_txt)
    except ValueError:
        raise ParseError(f"raza inválida '{raza_txt}' en '{nombre}'", token=raza_txt)
    if not 0 <= raza < categorias_tono:
        raise ParseError(f"raza '{raza_txt}' fuera de [0,{categorias_tono - 1}] en '{nombre}'", token=raza_txt)
    return AttributeVector(
        age=edad / edad_maxima,
        gender=int(genero_txt),
        skin_tone=raza / (categorias_tono - 1),
    )


def read_landmarks(landmark_file: Union[str, Path]) -> np.ndarray:
    """Lee un sidecar con una línea "x y" por punto. Devuelve 68×2 en píxeles."""
    ruta = Path(landmark_file)
    try:
        lineas = ruta.read_text().splitlines()
    except OSError as e:
        raise AnnotationError(f"no se pudo leer {ruta}: {e}")
    puntos = []
    for numero, linea in enumerate(lineas, 1):
        linea = linea.strip()
        if not linea:
            continue
        partes = linea.split()
        if len(partes) != 2:
            raise AnnotationError(f"{ruta}:{numero}: se esperaban 2 coordenadas, hay {len(partes)}")
        try:
            puntos.append((float(partes[0]), float(partes[1])))
        except ValueError:
            raise AnnotationError(f"{ruta}:{numero}: coordenada no numérica '{linea}'")
    if len(puntos) != NUM_LANDMARKS:
        raise AnnotationError(f"{ruta}: se esperaban {NUM_LANDMARKS} puntos, hay {len(puntos)}")
    return np.array(puntos, dtype=np.float64)


def write_landmarks(landmark_file: Union[str, Path], landmarks68: np.ndarray) -> None:
    lineas = [f"{x:.6f} {y:.6f}" for x, y in landmarks68]
    Path(landmark_file).write_text("\n".join(lineas) + "\n")


def cargar_imagen(ruta: Union[str, Path], tamano: Optional[int] = None) -> Tuple[ImageTensor, Tuple[int, int]]:
    """PNG/JPEG de 8 bits → float64 en [0,1]. Devuelve también el tamaño original (H, W)."""
    with Image.open(ruta) as img:
        img = img.convert("RGB")
        original = (img.height, img.width)
        if tamano is not None and (img.width, img.height) != (tamano, tamano):
            img = img.resize((tamano, tamano), Image.BILINEAR)
        datos = np.asarray(img, dtype=np.float64) / 255.0
    return datos, original


def guardar_imagen(ruta: Union[str, Path], imagen: np.ndarray) -> None:
    """Guarda H×W×3 (o H×W) en [0,1] como PNG de 8 bits por canal."""
    datos = np.clip(np.asarray(imagen, dtype=np.float64), 0.0, 1.0)
    datos = np.round(datos * 255.0).astype(np.uint8)
    Image.fromarray(datos).save(ruta, format="PNG")


def parse_annotation(
    filename: Union[str, Path],
    landmark_file: Union[str, Path],
    tamano: int = TAMANO_IMAGEN,
) -> FaceRecord:
    """Imagen UTKFace + sidecar de 68 puntos → FaceRecord a `tamano`×`tamano`."""
    ruta = Path(filename)
    atributos = parse_filename(ruta.name)
    landmarks68 = read_landmarks(landmark_file)
    if not ruta.exists():
        raise CorpusError(f"imagen no encontrada: {ruta}")
    imagen, (alto, ancho) = cargar_imagen(ruta, tamano)
    escala = np.array([tamano / ancho, tamano / alto])
    landmarks68 = landmarks68 * escala
    landmarks = reduce_landmarks(landmarks68, (tamano, tamano))
    mascara = derive_mask(landmarks68, (tamano, tamano))
    return FaceRecord(
        image=imagen,
        attributes=atributos,
        landmarks=landmarks,
        landmarks68=landmarks68,
        mask=mascara,
        source_id=ruta.name,
    )


# ================================
# LANDMARKS Y MÁSCARAS
# ================================

def reduce_landmarks(landmarks68: np.ndarray, size: Tuple[int, int] = (TAMANO_IMAGEN, TAMANO_IMAGEN)) -> LandmarkVector:
    """68 puntos iBUG → 7 puntos normalizados (centros de ojos, nariz, 4 puntos de la boca)."""
    puntos = np.asarray(landmarks68, dtype=np.float64)
    if puntos.shape != (NUM_LANDMARKS, 2):
        raise AnnotationError(f"se esperaban {NUM_LANDMARKS}×2 landmarks, forma {puntos.shape}")
    alto, ancho = size
    siete = np.stack([
        puntos[list(OJO_IZQUIERDO)].mean(axis=0),
        puntos[list(OJO_DERECHO)].mean(axis=0),
        puntos[NARIZ],
        puntos[BOCA_IZQUIERDA],
        puntos[BOCA_SUPERIOR],
        puntos[BOCA_DERECHA],
        puntos[BOCA_INFERIOR],
    ])
    normalizados = siete / np.array([ancho, alto], dtype=np.float64)
    recortados = np.clip(normalizados, 0.0, 1.0)
    fuera = bool(np.any(recortados != normalizados))
    if fuera:
        logger.warning("Landmarks fuera de la imagen; recortados a [0,1]")
    return LandmarkVector(points=recortados.reshape(-1), clamped=fuera)


def centros_pixeles(size: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Mallas X, Y con los centros de píxel (c + 0.5, r + 0.5)."""
    alto, ancho = size
    ys, xs = np.mgrid[0:alto, 0:ancho].astype(np.float64)
    return xs + 0.5, ys + 0.5


def rellenar_poligono_convexo(puntos: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Rasteriza la envolvente convexa de `puntos`; los bordes cuentan como interiores."""
    envolvente = ConvexHull(puntos)
    xs, ys = centros_pixeles(size)
    dentro = np.ones(size, dtype=bool)
    for a, b, c in envolvente.equations:
        dentro &= a * xs + b * ys + c <= 1e-9
    return dentro


def _rasterizar_segmento(puntos: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    alto, ancho = size
    mascara = np.zeros(size, dtype=bool)
    centro = puntos.mean(axis=0)
    direccion = puntos - centro
    normas = np.linalg.norm(direccion, axis=1)
    if normas.max() < 1e-12:
        extremos = np.stack([centro, centro])
    else:
        eje = direccion[np.argmax(normas)] / normas.max()
        proyecciones = direccion @ eje
        extremos = np.stack([centro + proyecciones.min() * eje, centro + proyecciones.max() * eje])
    longitud = np.linalg.norm(extremos[1] - extremos[0])
    pasos = max(2, int(np.ceil(longitud * 2)) + 1)
    for t in np.linspace(0.0, 1.0, pasos):
        x, y = extremos[0] + t * (extremos[1] - extremos[0])
        c, r = int(np.floor(x)), int(np.floor(y))
        if 0 <= r < alto and 0 <= c < ancho:
            mascara[r, c] = True
    return ndimage.binary_dilation(mascara, iterations=1)


def derive_mask(landmarks68: np.ndarray, size: Tuple[int, int] = (TAMANO_IMAGEN, TAMANO_IMAGEN)) -> MaskTensor:
    """Máscara binaria = envolvente convexa rellena de los 68 puntos.
    Envolvente degenerada (colineal) → segmento que la acota dilatado 1 píxel."""
    puntos = np.asarray(landmarks68, dtype=np.float64)
    try:
        mascara = rellenar_poligono_convexo(puntos, size)
    except (QhullError, ValueError):
        logger.warning("Envolvente degenerada; se usa el segmento dilatado")
        mascara = _rasterizar_segmento(puntos, size)
    return mascara.astype(np.uint8)


# ================================
# CARAS SINTÉTICAS
# ================================

# Tono de piel 0 → claro, 1 → oscuro (interpolación lineal por canal)
PIEL_CLARA = np.array([0.92, 0.78, 0.68])
PIEL_OSCURA = np.array([0.40, 0.26, 0.18])
CONTRASTE_TONO = float(np.mean(PIEL_CLARA) - np.mean(PIEL_OSCURA))
COLOR_FONDO = np.array([0.45, 0.50, 0.55])
COLOR_LABIOS = np.array([0.72, 0.30, 0.32])

# Disposición canónica (normalizada) de los 7 puntos
DISPOSICION_CANONICA = np.array([
    [0.35, 0.38], [0.65, 0.38], [0.50, 0.52],
    [0.39, 0.64], [0.50, 0.615], [0.61, 0.64], [0.50, 0.68],
])


@dataclass(frozen=True)
class RasgosIdentidad:
    """Rasgos que dependen solo de la semilla de identidad."""
    ancho_cara: float
    alto_cara: float
    radio_ojo: float
    color_iris: np.ndarray
    color_cabello: np.ndarray
    grosor_ceja: float
    manchas: np.ndarray
    textura: np.ndarray


def rasgos_de_identidad(identity_seed: int, size: int) -> RasgosIdentidad:
    rng = np.random.default_rng(identity_seed)
    ancho = rng.uniform(0.85, 1.15)
    alto = rng.uniform(0.9, 1.1)
    radio_ojo = rng.uniform(0.14, 0.22)
    iris = rng.uniform(0.05, 0.6, size=3)
    cabello = rng.uniform(0.02, 0.7, size=3)
    grosor = rng.uniform(0.04, 0.09)
    cantidad_manchas = int(rng.integers(3, 7))
    # (u, v, radio) relativos a la elipse de la cara
    manchas = np.column_stack([
        rng.uniform(-0.6, 0.6, cantidad_manchas),
        rng.uniform(-0.5, 0.7, cantidad_manchas),
        rng.uniform(0.05, 0.11, cantidad_manchas),
    ])
    ruido = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=3.0)
    ruido /= max(np.abs(ruido).max(), 1e-12)
    return RasgosIdentidad(ancho, alto, radio_ojo, iris, cabello, grosor, manchas, ruido)


@dataclass(frozen=True)
class MarcoFacial:
    """Elipse de la cara: centro, ejes u (a lo largo de los ojos) y v (hacia abajo), semiejes y distancia interocular."""
    medio_ojos: np.ndarray
    centro: np.ndarray
    u: np.ndarray
    v: np.ndarray
    d: float
    semi_u: float
    semi_v: float


def marco_facial(pares: np.ndarray, rasgos: RasgosIdentidad) -> MarcoFacial:
    ojo_izq, ojo_der = pares[0], pares[1]
    medio = (ojo_izq + ojo_der) / 2.0
    eje = ojo_der - ojo_izq
    distancia = float(np.linalg.norm(eje))
    if distancia < 1e-9:
        u = np.array([1.0, 0.0])
        distancia = 1.0
    else:
        u = eje / distancia
    v = np.array([-u[1], u[0]])
    centro = medio + 0.45 * (pares[3:7].mean(axis=0) - medio)
    return MarcoFacial(
        medio_ojos=medio,
        centro=centro,
        u=u,
        v=v,
        d=distancia,
        semi_u=1.0 * distancia * rasgos.ancho_cara,
        semi_v=1.3 * distancia * rasgos.alto_cara,
    )


def plantilla_68(landmarks: LandmarkVector, size: int, rasgos: RasgosIdentidad) -> np.ndarray:
    """Plantilla de 68 puntos (píxeles) cuyos anclajes coinciden exactamente con los 7 puntos dados."""
    pares = landmarks.as_pairs() * size
    marco = marco_facial(pares, rasgos)
    medio, centro, u, v, d = marco.medio_ojos, marco.centro, marco.u, marco.v, marco.d
    semi_u, semi_v = marco.semi_u, marco.semi_v
    boca = pares[3:7]
    boca_centro = boca.mean(axis=0)
    puntos = np.zeros((NUM_LANDMARKS, 2))

    # Mandíbula 0..16: mitad inferior de la elipse, de izquierda a derecha
    for i in range(17):
        t = np.pi - np.pi * i / 16.0
        puntos[i] = centro + semi_u * np.cos(t) * u + semi_v * np.sin(t) * v
    # Cejas 17..26
    for ojo, inicio in ((pares[0], 17), (pares[1], 22)):
        for j in range(5):
            s = (j - 2) / 2.0
            arco = 0.06 * d * (1.0 - s * s)
            puntos[inicio + j] = ojo + 0.28 * d * s * u - (0.35 * d + arco) * v
    # Puente nasal 27..30 (30 es el ancla) y base 31..35
    for j in range(4):
        puntos[27 + j] = medio + (j / 3.0) * (pares[2] - medio)
    puntos[NARIZ] = pares[2]
    for j in range(5):
        puntos[31 + j] = pares[2] + 0.12 * d * v + (j - 2) * 0.075 * d * u
    # Ojos 36..47: hexágonos centrados (desplazamientos de suma nula)
    r = rasgos.radio_ojo * d
    h = 0.5 * r
    hexagono = [(-r, 0.0), (-r / 2, -h), (r / 2, -h), (r, 0.0), (r / 2, h), (-r / 2, h)]
    for inicio, ojo in ((36, pares[0]), (42, pares[1])):
        for j, (du, dv) in enumerate(hexagono):
            puntos[inicio + j] = ojo + du * u + dv * v
    # Boca exterior 48..59 con anclajes exactos en 48, 51, 54, 57
    izq, sup, der, inf = boca
    contorno = {48: izq, 51: sup, 54: der, 57: inf}
    tramos = ((48, 51, izq, sup), (51, 54, sup, der), (54, 57, der, inf), (57, 60, inf, izq))
    for a, b, pa, pb in tramos:
        for k in range(1, b - a):
            t = k / float(b - a)
            # leve abombamiento hacia afuera del centro de la boca
            contorno[a + k] = pa + t * (pb - pa) - 0.3 * np.sin(np.pi * t) * (boca_centro - (pa + pb) / 2.0)
    for indice in range(48, 60):
        puntos[indice] = contorno[indice]
    # Boca interior 60..67
    interiores = (48, 50, 51, 52, 54, 56, 57, 58)
    for j, indice in enumerate(interiores):
        puntos[60 + j] = boca_centro + 0.55 * (puntos[indice] - boca_centro)
    puntos[NARIZ] = pares[2]
    for indice, valor in ((BOCA_IZQUIERDA, izq), (BOCA_SUPERIOR, sup), (BOCA_DERECHA, der), (BOCA_INFERIOR, inf)):
        puntos[indice] = valor
    return puntos


def _dibujar(imagen: np.ndarray, region: np.ndarray, color: np.ndarray) -> None:
    imagen[region] = color


def synth_face(
    attributes: AttributeVector,
    landmarks: LandmarkVector,
    identity_seed: int,
    size: int = TAMANO_IMAGEN,
    identity: Optional[str] = None,
) -> FaceRecord:
    """Cara procedimental determinista: elipse sombreada por tono, ojos/nariz/boca en los landmarks,
    textura y manchas sembradas por identidad. Mismas entradas → mismos bits."""
    rasgos = rasgos_de_identidad(identity_seed, size)
    landmarks68 = plantilla_68(landmarks, size, rasgos)
    pares = landmarks.as_pairs() * size
    marco = marco_facial(pares, rasgos)
    centro, u, v, d = marco.centro, marco.u, marco.v, marco.d
    semi_u, semi_v = marco.semi_u, marco.semi_v

    xs, ys = centros_pixeles((size, size))
    du = (xs - centro[0]) * u[0] + (ys - centro[1]) * u[1]
    dv = (xs - centro[0]) * v[0] + (ys - centro[1]) * v[1]
    radial = (du / semi_u) ** 2 + (dv / semi_v) ** 2

    imagen = np.empty((size, size, 3))
    imagen[:] = COLOR_FONDO

    # Cabello: corto (género 0) solo arriba, largo (género 1) también a los costados
    if attributes.gender == 0:
        cabello = (radial <= 1.25 ** 2) & (dv < -0.35 * semi_v)
    else:
        cabello = (radial <= 1.3 ** 2) & (dv < 0.55 * semi_v)
    _dibujar(imagen, cabello, rasgos.color_cabello)

    piel = PIEL_CLARA + attributes.skin_tone * (PIEL_OSCURA - PIEL_CLARA)
    cara = radial <= 1.0
    sombreado = 1.0 + 0.08 * rasgos.textura - 0.06 * np.clip(radial, 0.0, 1.0)
    imagen[cara] = np.clip(piel[None, :] * sombreado[cara][:, None], 0.0, 1.0)

    # Arrugas de la frente, proporcionales a la edad
    if attributes.age > 0.3:
        intensidad = 0.25 * (attributes.age - 0.3)
        for k in range(3):
            linea = cara & (np.abs(dv + (0.55 + 0.08 * k) * semi_v) < 0.6) & (np.abs(du) < 0.4 * semi_u)
            imagen[linea] *= 1.0 - intensidad

    for mu, mv, mr in rasgos.manchas:
        mancha = cara & ((du - mu * semi_u) ** 2 + (dv - mv * semi_v) ** 2 <= (mr * d) ** 2)
        imagen[mancha] = piel * 0.6

    # Cejas: distancia a la polilínea de cada ceja
    for inicio in (17, 22):
        tramo = landmarks68[inicio:inicio + 5]
        for a, b in zip(tramo[:-1], tramo[1:]):
            ab = b - a
            t = np.clip(((xs - a[0]) * ab[0] + (ys - a[1]) * ab[1]) / max(ab @ ab, 1e-12), 0.0, 1.0)
            dist = np.hypot(xs - (a[0] + t * ab[0]), ys - (a[1] + t * ab[1]))
            _dibujar(imagen, dist <= rasgos.grosor_ceja * d, rasgos.color_cabello)

    r = rasgos.radio_ojo * d
    for ojo in (pares[0], pares[1]):
        eu = (xs - ojo[0]) * u[0] + (ys - ojo[1]) * u[1]
        ev = (xs - ojo[0]) * v[0] + (ys - ojo[1]) * v[1]
        _dibujar(imagen, (eu / r) ** 2 + (ev / (0.6 * r)) ** 2 <= 1.0, np.array([0.95, 0.95, 0.95]))
        _dibujar(imagen, eu ** 2 + ev ** 2 <= (0.5 * r) ** 2, rasgos.color_iris)
        _dibujar(imagen, eu ** 2 + ev ** 2 <= (0.22 * r) ** 2, np.array([0.05, 0.05, 0.05]))

    nariz = (xs - pares[2][0]) ** 2 + (ys - pares[2][1]) ** 2 <= (0.08 * d) ** 2
    _dibujar(imagen, nariz, piel * 0.75)

    try:
        boca = rellenar_poligono_convexo(landmarks68[48:60], (size, size))
        _dibujar(imagen, boca, COLOR_LABIOS)
    except (QhullError, ValueError):
        pass

    return FaceRecord(
        image=np.clip(imagen, 0.0, 1.0),
        attributes=attributes,
        landmarks=landmarks,
        landmarks68=landmarks68,
        mask=derive_mask(landmarks68, (size, size)),
        identity=identity,
        source_id=f"synth-{identity_seed}",
    )


def landmarks_de_plantilla(plantilla: int) -> LandmarkVector:
    """Pose y expresión deterministas para un id de plantilla: giro ±10°, escala, traslación, boca."""
    rng = np.random.default_rng(plantilla)
    angulo = np.deg2rad(rng.uniform(-10.0, 10.0))
    escala = rng.uniform(0.92, 1.08)
    traslacion = rng.uniform(-0.04, 0.04, size=2)
    apertura = rng.uniform(0.0, 0.03)
    sonrisa = rng.uniform(-0.015, 0.015)
    pares = DISPOSICION_CANONICA.copy()
    pares[6, 1] += apertura
    pares[3, 1] -= sonrisa
    pares[5, 1] -= sonrisa
    centro = np.array([0.5, 0.5])
    rot = np.array([[np.cos(angulo), -np.sin(angulo)], [np.sin(angulo), np.cos(angulo)]])
    pares = (pares - centro) @ rot.T * escala + centro + traslacion
    return LandmarkVector(points=np.clip(pares, 0.0, 1.0).reshape(-1))


def generar_corpus_sintetico(
    n: int,
    identidades: int,
    seed: int,
    edad_maxima: int = EDAD_MAXIMA,
    categorias_tono: int = CATEGORIAS_TONO,
) -> List[EntradaSintetica]:
    """Entradas del manifiesto: identidades con atributos fijos, una plantilla de pose por imagen."""
    if n < 1 or identidades < 1:
        raise CorpusError("se necesita al menos 1 imagen y 1 identidad")
    rng = np.random.default_rng(seed)
    perfiles = []
    for k in range(identidades):
        perfiles.append({
            "identidad": f"id_{k:03d}",
            "semilla": int(rng.integers(0, 2 ** 31 - 1)),
            "edad": int(rng.integers(1, 90)),
            "genero": int(rng.integers(0, 2)),
            "raza": int(rng.integers(0, categorias_tono)),
        })
    entradas = []
    for i in range(n):
        perfil = perfiles[i % identidades]
        plantilla = int(rng.integers(0, 2 ** 31 - 1))
        archivo = f"{perfil['edad']}_{perfil['genero']}_{perfil['raza']}_{i:05d}.png"
        entradas.append(EntradaSintetica(
            archivo=archivo,
            identidad=perfil["identidad"],
            semilla=perfil["semilla"],
            atributos=(
                perfil["edad"] / edad_maxima,
                float(perfil["genero"]),
                perfil["raza"] / (categorias_tono - 1),
            ),
            plantilla=plantilla,
        ))
    return entradas


def registro_desde_entrada(entrada: EntradaSintetica, tamano: int = TAMANO_IMAGEN) -> FaceRecord:
    registro = synth_face(
        AttributeVector.from_array(entrada.atributos),
        landmarks_de_plantilla(entrada.plantilla),
        entrada.semilla,
        size=tamano,
        identity=entrada.identidad,
    )
    registro.source_id = entrada.archivo
    return registro


def escribir_corpus_sintetico(
    directorio: Union[str, Path],
    entradas: Sequence[EntradaSintetica],
    tamano: int = TAMANO_IMAGEN,
) -> Path:
    """PNG + sidecar de 68 puntos por entrada y el manifiesto. Legible como utkface y como synthetic-manifest."""
    directorio = Path(directorio)
    directorio.mkdir(parents=True, exist_ok=True)
    for entrada in entradas:
        registro = registro_desde_entrada(entrada, tamano)
        guardar_imagen(directorio / entrada.archivo, registro.image)
        write_landmarks(directorio / (Path(entrada.archivo).stem + ".txt"), registro.landmarks68)
    manifiesto = {
        "formato": "synthetic-manifest",
        "tamano": tamano,
        "registros": [e.como_dict() for e in entradas],
    }
    ruta = directorio / NOMBRE_MANIFIESTO
    ruta.write_text(yaml.safe_dump(manifiesto, sort_keys=False))
    logger.info("Corpus sintético escrito en %s (%d registros)", directorio, len(entradas))
    return ruta


def leer_manifiesto(ruta: Union[str, Path]) -> Tuple[List[EntradaSintetica], int]:
    ruta = Path(ruta)
    try:
        datos = yaml.safe_load(ruta.read_text())
    except (OSError, yaml.YAMLError) as e:
        raise CorpusError(f"manifiesto ilegible {ruta}: {e}")
    if not isinstance(datos, dict) or "registros" not in datos:
        raise CorpusError(f"manifiesto sin 'registros': {ruta}")
    entradas = []
    for fila in datos["registros"] or []:
        entradas.append(EntradaSintetica(
            archivo=str(fila["archivo"]),
            identidad=str(fila["identidad"]),
            semilla=int(fila["semilla"]),
            atributos=tuple(float(a) for a in fila["atributos"]),
            plantilla=int(fila["plantilla"]),
        ))
    return entradas, int(datos.get("tamano", TAMANO_IMAGEN))


# ================================
# CARGA DE CORPUS
# ================================

def detectar_formato(path: Union[str, Path]) -> str:
    ruta = Path(path)
    if ruta.is_file() or (ruta / NOMBRE_MANIFIESTO).exists():
        return "synthetic-manifest"
    return "utkface"


def _iterar_utkface(imagenes: List[Path], tamano: int) -> Iterator[FaceRecord]:
    omitidos = 0
    emitidos = 0
    for ruta in imagenes:
        sidecar = ruta.with_suffix(".txt")
        try:
            registro = parse_annotation(ruta, sidecar, tamano)
        except (ParseError, AnnotationError, CorpusError, OSError) as e:
            omitidos += 1
            logger.debug("Entrada omitida %s: %s", ruta.name, e)
            continue
        emitidos += 1
        yield registro
    if omitidos:
        logger.warning("Se omitieron %d entradas ilegibles del corpus", omitidos)
    if emitidos == 0:
        raise CorpusError("ninguna entrada legible en el corpus")


def _iterar_manifiesto(entradas: List[EntradaSintetica], tamano: int) -> Iterator[FaceRecord]:
    for entrada in entradas:
        yield registro_desde_entrada(entrada, tamano)


def load_corpus(
    path: Union[str, Path],
    format: str = "utkface",
    tamano: Optional[int] = None,
) -> Iterator[FaceRecord]:
    """Generador perezoso de FaceRecords en orden estable por nombre de archivo."""
    if format not in FORMATOS_CORPUS:
        raise CorpusError(f"formato desconocido '{format}', opciones: {', '.join(FORMATOS_CORPUS)}")
    ruta = Path(path)
    if not ruta.exists():
        raise CorpusError(f"no existe el corpus {ruta}")
    if format == "synthetic-manifest":
        manifiesto = ruta if ruta.is_file() else ruta / NOMBRE_MANIFIESTO
        entradas, tamano_manifiesto = leer_manifiesto(manifiesto)
        if not entradas:
            raise CorpusError(f"corpus vacío: {manifiesto}")
        entradas = sorted(entradas, key=lambda e: e.archivo)
        return _iterar_manifiesto(entradas, tamano or tamano_manifiesto)
    imagenes = sorted(p for p in ruta.iterdir() if p.suffix.lower() in EXTENSIONES_IMAGEN)
    if not imagenes:
        raise CorpusError(f"corpus vacío: {ruta}")
    return _iterar_utkface(imagenes, tamano or TAMANO_IMAGEN)
