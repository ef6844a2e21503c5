"""
Experimentos de identificación bajo los modelos de amenaza I y II, y FID.

Modelo I: el identificador se entrena solo con imágenes claras.
Modelo II: el identificador conoce el método y se entrena con claras y obscurecidas (50/50).
"""

import logging
import re
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import torch
import yaml

from core.baselines import KSameConfig, KSameResult, gaussian_blur, gray_out, k_same, pixelate, sigma_de_kernel
from core.checkpoints import Checkpoint, cargar_checkpoint
from core.dataset import AttributeVector, FaceRecord, ImageTensor
from core.errores import ConfigError, CorpusError, NumericalError, SampleSizeError, SplitError, SwapError
from core.model import (
    Generator,
    IdentityNet,
    IdentityNetConfig,
    PerceptualConfig,
    a_tensor,
    entrenar_clasificador,
    generator_forward,
    pretrain_perceptual,
    redimensionar,
)
from core.swap import swap_face
from core.train import escalar_registro

logger = logging.getLogger(__name__)

MODELOS_AMENAZA = ("I", "II")
UMBRAL_AUTOVALOR = 1e-6

NOMBRES_TABLA = {
    "none": "None",
    "gaussian": "Gaussian",
    "pixelate": "Pixelation",
    "ksame": "k-same",
    "upgan": "UP-GAN",
    "grayout": "Gray-out",
    "upgan-swap": "UP-GAN-swap",
}
METODOS_CON_PARAMETRO = {"gaussian", "pixelate", "ksame"}
METODOS_CON_GENERADOR = {"upgan", "upgan-swap"}
PARAMETRO_POR_DEFECTO = {"gaussian": 5, "pixelate": 8, "ksame": 10}


# ================================
# MÉTODOS
# ================================

@dataclass(frozen=True)
class MethodSpec:
    """Método de obscuración y su parámetro (kernel, bloque o k)."""
    tipo: str
    parametro: Optional[int] = None

    def __post_init__(self):
        if self.tipo not in NOMBRES_TABLA:
            raise ConfigError(f"método desconocido '{self.tipo}', opciones: {', '.join(NOMBRES_TABLA)}")
        if self.tipo in METODOS_CON_PARAMETRO and self.parametro is None:
            object.__setattr__(self, "parametro", PARAMETRO_POR_DEFECTO[self.tipo])
        if self.tipo not in METODOS_CON_PARAMETRO and self.parametro is not None:
            raise ConfigError(f"el método {self.tipo} no lleva parámetro")

    @property
    def nombre(self) -> str:
        """Nombre de fila de la tabla: Gaussian-5, Pixelation-8, k-same, UP-GAN..."""
        base = NOMBRES_TABLA[self.tipo]
        if self.tipo in ("gaussian", "pixelate"):
            return f"{base}-{self.parametro}"
        return base

    @property
    def etiqueta(self) -> str:
        return self.tipo if self.parametro is None else f"{self.tipo}-{self.parametro}"

    @classmethod
    def desde_texto(cls, texto: str) -> "MethodSpec":
        """Acepta "gaussian-5", "pixelate-8", "ksame-10", "upgan", "grayout", "none", "upgan-swap"."""
        texto = texto.strip().lower()
        if texto in NOMBRES_TABLA:
            return cls(texto)
        coincidencia = re.fullmatch(r"([a-z]+)-(\d+)", texto)
        if not coincidencia:
            raise ConfigError(f"método con formato inválido: '{texto}'")
        return cls(coincidencia.group(1), int(coincidencia.group(2)))


@dataclass
class ObscurationResult:
    image: ImageTensor
    identity: Optional[str]
    source_id: str
    metodo: str
    metadatos: Dict[str, object] = field(default_factory=dict)


def obscure_records(
    records: Sequence[FaceRecord],
    method: MethodSpec,
    generador: Optional[Generator] = None,
    fixed_attributes: Optional[AttributeVector] = None,
) -> List[ObscurationResult]:
    """Aplica el método a cada registro; k-same opera sobre el conjunto completo."""
    registros = list(records)
    if method.tipo in METODOS_CON_GENERADOR and generador is None:
        raise ConfigError(f"el método {method.tipo} requiere un checkpoint")
    metadatos = {"method": method.tipo, "param": method.parametro}
    if method.tipo == "gaussian":
        metadatos["sigma"] = sigma_de_kernel(method.parametro)

    resultado_k: Optional[KSameResult] = None
    if method.tipo == "ksame":
        resultado_k = k_same(registros, KSameConfig(k=method.parametro))

    salidas = []
    for i, registro in enumerate(registros):
        extra: Dict[str, object] = {}
        if method.tipo == "none":
            imagen = registro.image.copy()
        elif method.tipo == "gaussian":
            imagen = gaussian_blur(registro.image, method.parametro)
        elif method.tipo == "pixelate":
            imagen = pixelate(registro.image, method.parametro)
        elif method.tipo == "grayout":
            imagen = gray_out(registro.image, registro.mask)
        elif method.tipo == "ksame":
            imagen = resultado_k.surrogates[i]
            extra["cluster"] = resultado_k.cluster_de[i]
        else:
            atributos = fixed_attributes or registro.attributes
            falsa, mascara = generator_forward(atributos, registro.landmarks, generador)
            imagen = falsa
            if method.tipo == "upgan-swap":
                try:
                    imagen = swap_face(registro, falsa, mascara)
                except SwapError as e:
                    # sin región utilizable queda la cara generada sin mezclar
                    logger.warning("Intercambio omitido para %s: %s", registro.source_id or i, e)
                    extra["swap_omitido"] = True
        salidas.append(ObscurationResult(
            image=imagen,
            identity=registro.identity,
            source_id=registro.source_id,
            metodo=method.nombre,
            metadatos={**metadatos, **extra, "source_id": registro.source_id},
        ))
    return salidas


# ================================
# IDENTIFICADORES
# ================================

class Identificador(Protocol):
    def predecir(self, imagenes: Sequence[ImageTensor]) -> List[str]:
        ...


@dataclass
class IdentificadorRed:
    red: IdentityNet
    identidades: List[str]

    def predecir(self, imagenes: Sequence[ImageTensor]) -> List[str]:
        with torch.no_grad():
            logits = self.red(a_tensor(list(imagenes)))
        return [self.identidades[i] for i in logits.argmax(dim=1).tolist()]


class IdentificadorTabla:
    """
    Identificador Bayes-óptimo contra k-same con el mapa de clusters conocido: a cada sustituto
    le asigna la identidad más frecuente de su cluster.
    """

    def __init__(self, resultado: KSameResult, identidades: Sequence[str]):
        self.tabla: Dict[bytes, str] = {}
        for miembros in resultado.clusters:
            # empates: la primera identidad del cluster
            mas_frecuente = Counter(identidades[i] for i in miembros).most_common(1)[0][0]
            self.tabla[np.ascontiguousarray(resultado.surrogates[miembros[0]]).tobytes()] = mas_frecuente

    def predecir(self, imagenes: Sequence[ImageTensor]) -> List[str]:
        return [self.tabla.get(np.ascontiguousarray(imagen).tobytes(), "") for imagen in imagenes]


@dataclass(frozen=True)
class ThreatScenario:
    modelo: str
    metodo: MethodSpec
    test_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.modelo not in MODELOS_AMENAZA:
            raise ConfigError(f"modelo de amenaza desconocido '{self.modelo}', opciones: I, II")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction debe estar en (0, 1): {self.test_fraction}")


def split(records: Sequence[FaceRecord], test_fraction: float, seed: int) -> Tuple[List[int], List[int]]:
    """Partición estratificada por identidad, disjunta por imagen; cada identidad aparece en ambos lados."""
    por_identidad: Dict[str, List[int]] = defaultdict(list)
    for i, registro in enumerate(records):
        if registro.identity is None:
            raise SplitError(f"registro sin identidad: {registro.source_id}")
        por_identidad[registro.identity].append(i)
    if len(por_identidad) < 2:
        raise SplitError("se necesitan al menos 2 identidades")
    rng = np.random.default_rng(seed)
    entrenamiento, prueba = [], []
    for identidad in sorted(por_identidad):
        indices = por_identidad[identidad]
        if len(indices) < 2:
            raise SplitError(f"la identidad {identidad} tiene una sola imagen")
        orden = rng.permutation(indices)
        n_prueba = min(max(1, int(round(len(indices) * test_fraction))), len(indices) - 1)
        prueba.extend(int(i) for i in orden[:n_prueba])
        entrenamiento.extend(int(i) for i in orden[n_prueba:])
    return sorted(entrenamiento), sorted(prueba)


def intercalar(claras: Sequence[ImageTensor], obscurecidas: Sequence[ImageTensor]) -> List[ImageTensor]:
    """Flujo 50/50: clara, obscurecida, clara, obscurecida..."""
    if len(claras) != len(obscurecidas):
        raise SplitError("claras y obscurecidas deben tener el mismo tamaño")
    flujo: List[ImageTensor] = []
    for clara, oscura in zip(claras, obscurecidas):
        flujo.extend((clara, oscura))
    return flujo


def train_identifier(
    corpus: Sequence[FaceRecord],
    scenario: ThreatScenario,
    obscurecidas: Optional[Sequence[ObscurationResult]] = None,
    epochs: int = 40,
) -> IdentificadorRed:
    """Clasificador de identidades. En el modelo II el flujo de entrenamiento intercala claras y obscurecidas."""
    registros = list(corpus)
    identidades = sorted({r.identity for r in registros if r.identity is not None})
    if len(identidades) < 2 or any(r.identity is None for r in registros):
        raise SplitError("el identificador necesita al menos 2 identidades y todos los registros etiquetados")
    imagenes = [r.image for r in registros]
    etiquetas = [r.identity for r in registros]
    if scenario.modelo == "II":
        if obscurecidas is None:
            obscurecidas = obscure_records(registros, scenario.metodo)
        imagenes = intercalar(imagenes, [o.image for o in obscurecidas])
        etiquetas = [e for e in etiquetas for _ in range(2)]
    tensor = a_tensor(imagenes)
    cfg = IdentityNetConfig.para_escala(tensor.shape[-1], len(identidades))
    red, precision = entrenar_clasificador(
        tensor,
        torch.tensor([identidades.index(e) for e in etiquetas]),
        cfg,
        epochs=epochs,
        seed=scenario.seed,
    )
    logger.info(
        "Identificador %s/%s entrenado con %d imágenes: precisión %.3f",
        scenario.modelo, scenario.metodo.nombre, len(imagenes), precision,
    )
    return IdentificadorRed(red=red, identidades=identidades)


def identification_accuracy(identifier: Identificador, test: Sequence[ObscurationResult]) -> float:
    """Precisión top-1."""
    if not test:
        raise SplitError("conjunto de prueba vacío")
    conocidas = getattr(identifier, "identidades", None)
    if conocidas is not None:
        faltantes = {r.identity for r in test} - set(conocidas)
        if faltantes:
            raise SplitError(f"identidades de prueba ausentes en el entrenamiento: {sorted(faltantes)}")
    predicciones = identifier.predecir([r.image for r in test])
    aciertos = sum(p == r.identity for p, r in zip(predicciones, test))
    return aciertos / len(test)


# ================================
# FID
# ================================

def _raiz_simetrica(matriz: np.ndarray, nombre: str) -> np.ndarray:
    autovalores, autovectores = scipy.linalg.eigh(matriz)
    _verificar_autovalores(autovalores, nombre)
    return (autovectores * np.sqrt(np.clip(autovalores, 0.0, None))) @ autovectores.T


def _verificar_autovalores(autovalores: np.ndarray, nombre: str) -> None:
    escala = max(1.0, float(np.max(np.abs(autovalores))))
    if autovalores.min() < -UMBRAL_AUTOVALOR * escala:
        raise NumericalError(f"autovalor negativo {autovalores.min():.3e} en {nombre}", termino=nombre)


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """‖μa − μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^½), con la raíz vía √Σa Σb √Σa simetrizada."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise SampleSizeError(f"conjuntos de características incompatibles: {a.shape} y {b.shape}")
    dimension = a.shape[1]
    for nombre, conjunto in (("a", a), ("b", b)):
        if conjunto.shape[0] <= dimension:
            raise SampleSizeError(
                f"el conjunto {nombre} tiene {conjunto.shape[0]} muestras; se necesitan más que la dimensión {dimension}"
            )
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    sigma_a = np.atleast_2d(np.cov(a, rowvar=False))
    sigma_b = np.atleast_2d(np.cov(b, rowvar=False))
    raiz_a = _raiz_simetrica(sigma_a, "covarianza")
    producto = raiz_a @ sigma_b @ raiz_a
    producto = (producto + producto.T) / 2.0
    autovalores = scipy.linalg.eigvalsh(producto)
    _verificar_autovalores(autovalores, "producto de covarianzas")
    traza_raiz = float(np.sum(np.sqrt(np.clip(autovalores, 0.0, None))))
    distancia = float(np.sum((mu_a - mu_b) ** 2) + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * traza_raiz)
    return max(distancia, 0.0)


def caracteristicas_perceptuales(imagenes: Sequence[ImageTensor], perceptual: PerceptualConfig) -> np.ndarray:
    """Capa penúltima de la red de identidad congelada."""
    red = perceptual.network
    dtype = next(red.parameters()).dtype
    with torch.no_grad():
        return red.embedding(a_tensor(list(imagenes), dtype)).double().numpy()


def caracteristicas_pixeles(imagenes: Sequence[ImageTensor], lado: int = 2) -> np.ndarray:
    """Color medio de una grilla lado×lado por imagen; para comparar carpetas sin red entrenada."""
    tensor = redimensionar(a_tensor(list(imagenes), torch.float64), lado)
    return tensor.flatten(1).numpy()


# ================================
# TABLA
# ================================

@dataclass(frozen=True)
class EvalConfig:
    methods: Tuple[str, ...] = (
        "none", "gaussian-5", "gaussian-15", "pixelate-4", "pixelate-8", "pixelate-16", "ksame-10", "upgan",
    )
    threat_models: Tuple[str, ...] = MODELOS_AMENAZA
    test_fraction: float = 0.3
    identifier_epochs: int = 40
    scale: int = 32
    seed: int = 0
    corpus: Optional[str] = None
    corpus_format: str = "synthetic-manifest"

    def __post_init__(self):
        for modelo in self.threat_models:
            if modelo not in MODELOS_AMENAZA:
                raise ConfigError(f"modelo de amenaza desconocido '{modelo}'")
        for metodo in self.methods:
            MethodSpec.desde_texto(metodo)

    def como_dict(self) -> dict:
        datos = asdict(self)
        datos["methods"] = list(self.methods)
        datos["threat_models"] = list(self.threat_models)
        return datos


def cargar_eval_config(ruta: Optional[Union[str, Path]] = None, **overrides) -> EvalConfig:
    datos: Dict[str, object] = {}
    if ruta is not None:
        ruta = Path(ruta)
        if not ruta.is_file():
            raise ConfigError(f"no existe el archivo de configuración {ruta}")
        datos.update(yaml.safe_load(ruta.read_text()) or {})
    datos.update({clave: valor for clave, valor in overrides.items() if valor is not None})
    desconocidas = sorted(set(datos) - set(EvalConfig().como_dict()))
    if desconocidas:
        raise ConfigError(f"claves de configuración desconocidas: {', '.join(desconocidas)}")
    for clave in ("methods", "threat_models"):
        if clave in datos:
            datos[clave] = tuple(datos[clave])
    return EvalConfig(**datos)


@dataclass
class FilaReporte:
    metodo: str
    threat_i: Optional[float] = None
    threat_ii: Optional[float] = None
    fid: Optional[float] = None


@dataclass
class MetricsReport:
    filas: List[FilaReporte]
    corpus: str = ""
    seed: int = 0
    config: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for fila in self.filas:
            for valor in (fila.threat_i, fila.threat_ii):
                if valor is not None and not 0.0 <= valor <= 1.0:
                    raise ConfigError(f"precisión fuera de [0,1] en {fila.metodo}: {valor}")
            if fila.fid is not None and fila.fid < 0:
                raise ConfigError(f"FID negativo en {fila.metodo}: {fila.fid}")

    def fila(self, metodo: str) -> FilaReporte:
        for fila in self.filas:
            if fila.metodo == metodo:
                return fila
        raise KeyError(metodo)

    def como_dict(self) -> dict:
        return {
            "corpus": self.corpus,
            "seed": self.seed,
            "config": self.config,
            "filas": [asdict(f) for f in self.filas],
        }

    @classmethod
    def desde_dict(cls, datos: dict) -> "MetricsReport":
        return cls(
            filas=[FilaReporte(**f) for f in datos.get("filas", [])],
            corpus=datos.get("corpus", ""),
            seed=int(datos.get("seed", 0)),
            config=datos.get("config") or {},
        )


def red_para_fid(
    entrenamiento: Sequence[FaceRecord],
    cfg: EvalConfig,
    checkpoint: Optional[Checkpoint] = None,
) -> Optional[PerceptualConfig]:
    """
    Red perceptual congelada para FID: la del checkpoint si fue entrenada a la escala de la evaluación;
    si no, una preentrenada sobre las claras de entrenamiento. None si el corpus no alcanza para entrenarla.
    """
    if checkpoint is not None and checkpoint.model_config.image_size == cfg.scale:
        perceptual = checkpoint.construir_perceptual()
        if perceptual is not None:
            return perceptual
    try:
        return pretrain_perceptual(
            entrenamiento, epochs=cfg.identifier_epochs, seed=cfg.seed, tamano=cfg.scale, precision_objetivo=0.0
        )
    except CorpusError as e:
        logger.warning("Sin red perceptual para FID: %s", e)
        return None


def run_table(
    corpus: Sequence[FaceRecord],
    methods: Sequence[MethodSpec],
    scenarios: Sequence[str] = MODELOS_AMENAZA,
    checkpoint: Optional[Union[str, Path, Checkpoint]] = None,
    cfg: Optional[EvalConfig] = None,
    perceptual: Optional[PerceptualConfig] = None,
) -> MetricsReport:
    """
    Grilla completa (método × modelo de amenaza) más FID por método. Los sustitutos k-same y las caras
    generadas se calculan por separado para entrenamiento y prueba. FID compara la capa penúltima de la
    red perceptual congelada entre las claras de entrenamiento y las obscurecidas de prueba.
    """
    cfg = cfg or EvalConfig()
    registros = [escalar_registro(r, cfg.scale) for r in corpus]
    entrenamiento_idx, prueba_idx = split(registros, cfg.test_fraction, cfg.seed)
    entrenamiento = [registros[i] for i in entrenamiento_idx]
    prueba = [registros[i] for i in prueba_idx]

    if checkpoint is not None and not isinstance(checkpoint, Checkpoint):
        checkpoint = cargar_checkpoint(checkpoint)
    generador = None
    if any(m.tipo in METODOS_CON_GENERADOR for m in methods):
        if checkpoint is None:
            raise ConfigError("los métodos UP-GAN requieren --checkpoint")
        generador = checkpoint.construir_generador()
        if generador.cfg.image_size != cfg.scale:
            raise ConfigError(
                f"el checkpoint genera {generador.cfg.image_size}px y la evaluación usa scale={cfg.scale}"
            )

    if perceptual is None:
        perceptual = red_para_fid(entrenamiento, cfg, checkpoint)
    claras = None if perceptual is None else caracteristicas_perceptuales([r.image for r in entrenamiento], perceptual)
    identificador_i = None
    if "I" in scenarios:
        base = ThreatScenario("I", MethodSpec("none"), cfg.test_fraction, cfg.seed)
        identificador_i = train_identifier(entrenamiento, base, epochs=cfg.identifier_epochs)

    filas = []
    for metodo in methods:
        fila = FilaReporte(metodo=metodo.nombre)
        prueba_obscurecida = obscure_records(prueba, metodo, generador)
        if identificador_i is not None:
            fila.threat_i = identification_accuracy(identificador_i, prueba_obscurecida)
        if "II" in scenarios:
            escenario = ThreatScenario("II", metodo, cfg.test_fraction, cfg.seed)
            entrenamiento_obscurecido = obscure_records(entrenamiento, metodo, generador)
            identificador_ii = train_identifier(
                entrenamiento, escenario, entrenamiento_obscurecido, epochs=cfg.identifier_epochs
            )
            fila.threat_ii = identification_accuracy(identificador_ii, prueba_obscurecida)
        if claras is not None:
            try:
                obscurecidas = caracteristicas_perceptuales([r.image for r in prueba_obscurecida], perceptual)
                fila.fid = fid(claras, obscurecidas)
            except (SampleSizeError, NumericalError) as e:
                logger.warning("FID omitido para %s: %s", metodo.nombre, e)
        logger.info("Método %s: I=%s II=%s FID=%s", fila.metodo, fila.threat_i, fila.threat_ii, fila.fid)
        filas.append(fila)
    return MetricsReport(filas=filas, corpus=cfg.corpus or "", seed=cfg.seed, config=cfg.como_dict())


def guardar_reporte(ruta: Union[str, Path], reporte: MetricsReport) -> Path:
    ruta = Path(ruta)
    ruta.parent.mkdir(parents=True, exist_ok=True)
    ruta.write_text(yaml.safe_dump(reporte.como_dict(), sort_keys=False))
    return ruta


def cargar_reporte(ruta: Union[str, Path]) -> MetricsReport:
    ruta = Path(ruta)
    if not ruta.is_file():
        raise ConfigError(f"no existe el reporte {ruta}")
    return MetricsReport.desde_dict(yaml.safe_load(ruta.read_text()) or {})
