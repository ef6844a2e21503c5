"""
Optimización alternada de UP-GAN con checkpoints, métricas por paso (JSON lines) y grillas de muestras.

El muestreo del lote y el aumento del paso k dependen solo de (seed, k): reanudar desde un
checkpoint reproduce exactamente la corrida sin interrupción.
"""

import json
import logging
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import yaml
from torchvision.utils import save_image

from core.augment import AugmentConfig, augment_record
from core.checkpoints import Checkpoint, cargar_checkpoint, estado_perceptual, guardar_checkpoint
from core.dataset import TAMANO_IMAGEN, AttributeVector, FaceRecord, LandmarkVector
from core.errores import CheckpointError, ConfigError, CorpusError, NumericalError, TrainingError
from core.losses import LoteEntrenamiento, LossBreakdown, LossWeights, desglose, discriminator_loss, objetivo_generador
from core.model import (
    Discriminator,
    Generator,
    ModelConfig,
    PerceptualConfig,
    a_numpy,
    a_tensor,
    construir_modelos,
    generator_forward,
    pretrain_perceptual,
    redimensionar,
)

logger = logging.getLogger(__name__)

DISPOSITIVO = os.environ.get("UPGAN_DEVICE", "cpu")

NOMBRE_METRICAS = "metrics.jsonl"
NOMBRE_CHECKPOINT_FINAL = "final.pt"
DIRECTORIO_CHECKPOINTS = "checkpoints"
DIRECTORIO_MUESTRAS = "samples"
NUM_SONDAS = 16
COLUMNAS_GRILLA = 4


# ================================
# CONFIGURACIÓN
# ================================

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    d_steps_per_g_step: int = 1
    seed: int = 0
    scale: int = 32
    weights: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    use_augmentation: bool = True
    ablation: str = "full"
    checkpoint_every: int = 500
    sample_every: int = 500
    log_every: int = 50
    perceptual_epochs: int = 30
    perceptual_target_accuracy: float = 0.9
    dtype: str = "float32"
    corpus: Optional[str] = None
    corpus_format: str = "synthetic-manifest"

    def __post_init__(self):
        if self.steps <= 0:
            raise ConfigError(f"steps debe ser > 0: {self.steps}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size debe ser >= 2: {self.batch_size}")
        if self.d_steps_per_g_step < 1:
            raise ConfigError(f"d_steps_per_g_step debe ser >= 1: {self.d_steps_per_g_step}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype debe ser float32 o float64: {self.dtype}")
        for nombre in ("checkpoint_every", "sample_every", "log_every"):
            if getattr(self, nombre) <= 0:
                raise ConfigError(f"{nombre} debe ser > 0")
        ModelConfig.para_escala(self.scale)
        self.weights.con_ablacion(self.ablation)

    @property
    def pesos_efectivos(self) -> LossWeights:
        return self.weights.con_ablacion(self.ablation)

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)


PREFIJOS_ANIDADOS = {"weights": LossWeights, "augment": AugmentConfig}
# la semilla de aumento sale siempre de la semilla de la corrida
CLAVES_EXCLUIDAS = {"augment_seed"}


def config_a_dict(cfg: TrainConfig) -> Dict[str, Any]:
    """Documento plano: los dataclasses anidados van con prefijo weights_* / augment_*."""
    plano: Dict[str, Any] = {}
    for campo in fields(cfg):
        valor = getattr(cfg, campo.name)
        if campo.name in PREFIJOS_ANIDADOS:
            for clave, subvalor in asdict(valor).items():
                nombre = f"{campo.name}_{clave}"
                if nombre not in CLAVES_EXCLUIDAS:
                    plano[nombre] = list(subvalor) if isinstance(subvalor, tuple) else subvalor
        else:
            plano[campo.name] = valor
    return plano


def config_desde_dict(datos: Dict[str, Any]) -> TrainConfig:
    validas = set(config_a_dict(TrainConfig()))
    desconocidas = sorted(set(datos) - validas)
    if desconocidas:
        raise ConfigError(f"claves de configuración desconocidas: {', '.join(desconocidas)}")
    base: Dict[str, Any] = {}
    anidados: Dict[str, Dict[str, Any]] = {prefijo: {} for prefijo in PREFIJOS_ANIDADOS}
    for clave, valor in datos.items():
        prefijo = clave.split("_", 1)[0]
        if prefijo in PREFIJOS_ANIDADOS:
            anidados[prefijo][clave.split("_", 1)[1]] = valor
        else:
            base[clave] = valor
    if "rotation_range" in anidados["augment"]:
        anidados["augment"]["rotation_range"] = tuple(float(v) for v in anidados["augment"]["rotation_range"])
    try:
        return TrainConfig(
            weights=LossWeights(**anidados["weights"]),
            augment=AugmentConfig(seed=int(base.get("seed", 0)), **anidados["augment"]),
            **base,
        )
    except TypeError as e:
        raise ConfigError(f"configuración inválida: {e}") from e


def cargar_train_config(ruta: Optional[Union[str, Path]] = None, **overrides: Any) -> TrainConfig:
    """Precedencia: valores por defecto < archivo YAML < overrides (los None se ignoran)."""
    datos: Dict[str, Any] = {}
    if ruta is not None:
        ruta = Path(ruta)
        if not ruta.is_file():
            raise ConfigError(f"no existe el archivo de configuración {ruta}")
        with open(ruta, "r", encoding="utf-8") as f:
            contenido = yaml.safe_load(f) or {}
        if not isinstance(contenido, dict):
            raise ConfigError(f"{ruta} debe contener un documento clave: valor")
        datos.update(contenido)
    datos.update({clave: valor for clave, valor in overrides.items() if valor is not None})
    return config_desde_dict(datos)


def guardar_train_config(ruta: Union[str, Path], cfg: TrainConfig) -> None:
    with open(ruta, "w", encoding="utf-8") as f:
        yaml.safe_dump(config_a_dict(cfg), f, sort_keys=False)


# ================================
# DATOS
# ================================

def escalar_registro(record: FaceRecord, tamano: int) -> FaceRecord:
    """Reduce imagen (promedio por área), máscara y landmarks de 68 puntos a tamano×tamano."""
    alto, ancho = record.tamano
    if alto == tamano and ancho == tamano:
        return record
    imagen = a_numpy(redimensionar(a_tensor(record.image, torch.float64), tamano))[0]
    mascara = None
    if record.mask is not None:
        mascara_t = torch.from_numpy(record.mask.astype(np.float64))[None, None]
        mascara = (redimensionar(mascara_t, tamano)[0, 0].numpy() >= 0.5).astype(record.mask.dtype)
    landmarks68 = None
    if record.landmarks68 is not None:
        landmarks68 = record.landmarks68 * np.array([tamano / ancho, tamano / alto])
    return replace(record, image=np.clip(imagen, 0.0, 1.0), mask=mascara, landmarks68=landmarks68)


def preparar_registros(corpus: Sequence[FaceRecord], tamano: int) -> List[FaceRecord]:
    registros = [escalar_registro(r, tamano) for r in corpus]
    if not registros:
        raise CorpusError("corpus de entrenamiento vacío")
    sin_anotar = [r.source_id for r in registros if r.mask is None or r.landmarks68 is None]
    if sin_anotar:
        raise CorpusError(f"{len(sin_anotar)} registros sin máscara o landmarks (p. ej. {sin_anotar[0]})")
    return registros


def aumento_escalado(cfg: TrainConfig) -> AugmentConfig:
    """alpha y sigma están expresados a 128 px; se escalan a la resolución de entrenamiento."""
    factor = cfg.scale / TAMANO_IMAGEN
    return replace(
        cfg.augment,
        elastic_alpha=cfg.augment.elastic_alpha * factor,
        elastic_sigma=cfg.augment.elastic_sigma * factor,
        seed=cfg.seed,
    )


def indices_del_paso(seed: int, step: int, total: int, batch_size: int) -> np.ndarray:
    rng = np.random.default_rng([seed, step])
    return rng.choice(total, size=batch_size, replace=total < batch_size)


def construir_lote(
    registros: Sequence[FaceRecord],
    cfg: TrainConfig,
    step: int,
    aumento: Optional[AugmentConfig] = None,
) -> LoteEntrenamiento:
    indices = indices_del_paso(cfg.seed, step, len(registros), cfg.batch_size)
    elegidos = []
    for posicion, indice in enumerate(indices):
        registro = registros[indice]
        if cfg.use_augmentation and aumento is not None:
            registro = augment_record(registro, aumento, step * cfg.batch_size + posicion)
        elegidos.append(registro)
    dtype = cfg.torch_dtype
    return LoteEntrenamiento(
        condicion=torch.from_numpy(np.stack([r.vector_condicion() for r in elegidos])).to(dtype).to(DISPOSITIVO),
        imagenes=a_tensor([r.image for r in elegidos], dtype).to(DISPOSITIVO),
        mascaras=torch.from_numpy(np.stack([r.mask for r in elegidos]).astype(np.float64)).to(dtype).to(DISPOSITIVO),
    )


def sondas_fijas(registros: Sequence[FaceRecord], seed: int, dtype: torch.dtype) -> torch.Tensor:
    """16 condiciones (v_a, v_l) elegidas al inicio de la corrida; iguales al reanudar."""
    rng = np.random.default_rng([seed, NUM_SONDAS])
    indices = rng.choice(len(registros), size=NUM_SONDAS, replace=len(registros) < NUM_SONDAS)
    return torch.from_numpy(np.stack([registros[i].vector_condicion() for i in indices])).to(dtype).to(DISPOSITIVO)


# ================================
# SALIDAS
# ================================

def guardar_grilla(imagenes: torch.Tensor, ruta: Union[str, Path], columnas: int = COLUMNAS_GRILLA) -> Path:
    """Mosaico PNG de B imágenes en `columnas` columnas, sin separación entre celdas."""
    ruta = Path(ruta)
    ruta.parent.mkdir(parents=True, exist_ok=True)
    save_image(imagenes.detach().clamp(0.0, 1.0).cpu(), ruta, nrow=columnas, padding=0)
    return ruta


def leer_metricas(ruta: Union[str, Path]) -> List[Dict[str, float]]:
    ruta = Path(ruta)
    if not ruta.is_file():
        return []
    with open(ruta, "r", encoding="utf-8") as f:
        return [json.loads(linea) for linea in f if linea.strip()]


def _recortar_metricas(ruta: Path, hasta: int) -> None:
    """Al reanudar se descartan los registros posteriores al checkpoint."""
    conservadas = [m for m in leer_metricas(ruta) if m["step"] <= hasta]
    with open(ruta, "w", encoding="utf-8") as f:
        for metrica in conservadas:
            f.write(json.dumps(metrica) + "\n")


@contextmanager
def congelado(modulo: torch.nn.Module) -> Iterator[None]:
    """Desactiva los gradientes de `modulo` mientras dura el bloque."""
    previos = [p.requires_grad for p in modulo.parameters()]
    for p in modulo.parameters():
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, previo in zip(modulo.parameters(), previos):
            p.requires_grad_(previo)


# ================================
# ENTRENAMIENTO
# ================================

@dataclass
class ResultadoEntrenamiento:
    checkpoint: Path
    metricas: Path
    historial: List[LossBreakdown]
    steps: int


NotificadorPaso = Callable[[int, LossBreakdown], None]


def _construir_optimizadores(generador: Generator, discriminador: Discriminator, cfg: TrainConfig):
    betas = (cfg.beta1, cfg.beta2)
    return (
        torch.optim.Adam(generador.parameters(), lr=cfg.lr, betas=betas),
        torch.optim.Adam(discriminador.parameters(), lr=cfg.lr, betas=betas),
    )


def _instantanea(
    generador: Generator,
    discriminador: Discriminator,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
    perceptual: Optional[PerceptualConfig],
    cfg: TrainConfig,
    step: int,
) -> Checkpoint:
    return Checkpoint(
        model_config=generador.cfg,
        generator_state=generador.state_dict(),
        discriminator_state=discriminador.state_dict(),
        step=step,
        train_config=config_a_dict(cfg),
        opt_g_state=opt_g.state_dict(),
        opt_d_state=opt_d.state_dict(),
        perceptual=None if perceptual is None else estado_perceptual(perceptual),
        dtype=cfg.dtype,
    )


def train(
    corpus: Sequence[FaceRecord],
    cfg: TrainConfig,
    out_dir: Union[str, Path],
    resume: Optional[Union[str, Path]] = None,
    perceptual: Optional[PerceptualConfig] = None,
    notificar: Optional[NotificadorPaso] = None,
) -> ResultadoEntrenamiento:
    """
    Por paso: lote, aumento, d_steps_per_g_step actualizaciones de D, una de G; métricas en cada paso,
    checkpoints y grillas según el calendario. Devuelve el checkpoint final y la ruta de métricas.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    registros = preparar_registros(corpus, cfg.scale)
    pesos = cfg.pesos_efectivos
    model_cfg = ModelConfig.para_escala(cfg.scale)
    generador, discriminador = construir_modelos(model_cfg, cfg.seed, cfg.torch_dtype)
    opt_g, opt_d = _construir_optimizadores(generador, discriminador, cfg)
    inicio = 0
    ruta_metricas = out_dir / NOMBRE_METRICAS

    if resume is not None:
        checkpoint = cargar_checkpoint(resume, model_cfg)
        generador.load_state_dict(checkpoint.generator_state)
        discriminador.load_state_dict(checkpoint.discriminator_state)
        if checkpoint.opt_g_state is None or checkpoint.opt_d_state is None:
            raise CheckpointError(f"{resume} no guarda el estado de los optimizadores; no se puede reanudar")
        opt_g.load_state_dict(checkpoint.opt_g_state)
        opt_d.load_state_dict(checkpoint.opt_d_state)
        perceptual = perceptual or checkpoint.construir_perceptual()
        inicio = checkpoint.step
        _recortar_metricas(ruta_metricas, inicio)
        logger.info("Reanudando desde %s en el paso %d", resume, inicio)
    elif ruta_metricas.exists():
        ruta_metricas.unlink()

    if pesos.lambda3 > 0 and perceptual is None:
        perceptual = pretrain_perceptual(
            registros,
            epochs=cfg.perceptual_epochs,
            seed=cfg.seed,
            precision_objetivo=cfg.perceptual_target_accuracy,
        )
    if perceptual is not None:
        perceptual.network.to(cfg.torch_dtype).to(DISPOSITIVO)
    generador.to(DISPOSITIVO)
    discriminador.to(DISPOSITIVO)

    aumento = aumento_escalado(cfg) if cfg.use_augmentation else None
    sondas = sondas_fijas(registros, cfg.seed, cfg.torch_dtype)
    ultimo_checkpoint: Optional[Path] = Path(resume) if resume is not None else None
    historial: List[LossBreakdown] = []
    logger.info(
        "Entrenando %d pasos (S=%d, lote=%d, ablación=%s) sobre %d registros",
        cfg.steps - inicio, cfg.scale, cfg.batch_size, cfg.ablation, len(registros),
    )

    with open(ruta_metricas, "a", encoding="utf-8") as archivo_metricas:
        for step in range(inicio + 1, cfg.steps + 1):
            lote = construir_lote(registros, cfg, step, aumento)
            try:
                generador.train()
                discriminador.train()
                for _ in range(cfg.d_steps_per_g_step):
                    opt_d.zero_grad()
                    perdida_d = discriminator_loss(lote, generador, discriminador)
                    perdida_d.backward()
                    opt_d.step()
                with congelado(discriminador):
                    opt_g.zero_grad()
                    total_g, terminos = objetivo_generador(lote, generador, discriminador, pesos, perceptual)
                    total_g.backward()
                    opt_g.step()
            except NumericalError as e:
                raise TrainingError(
                    f"entrenamiento abortado en el paso {step}: {e}",
                    ultimo_checkpoint=None if ultimo_checkpoint is None else str(ultimo_checkpoint),
                ) from e

            breakdown = desglose(terminos, total_g.detach(), perdida_d.detach())
            historial.append(breakdown)
            try:
                archivo_metricas.write(json.dumps({"step": step, **breakdown.como_dict()}) + "\n")
                archivo_metricas.flush()
                if step % cfg.checkpoint_every == 0 and step != cfg.steps:
                    ultimo_checkpoint = guardar_checkpoint(
                        out_dir / DIRECTORIO_CHECKPOINTS / f"step_{step:06d}.pt",
                        _instantanea(generador, discriminador, opt_g, opt_d, perceptual, cfg, step),
                    )
                if step % cfg.sample_every == 0 or step == cfg.steps:
                    generador.eval()
                    with torch.no_grad():
                        muestras, _ = generador(sondas)
                    guardar_grilla(muestras, out_dir / DIRECTORIO_MUESTRAS / f"step_{step:06d}.png")
            except (OSError, CheckpointError) as e:
                raise TrainingError(
                    f"no se pudieron escribir artefactos en el paso {step}: {e}",
                    ultimo_checkpoint=None if ultimo_checkpoint is None else str(ultimo_checkpoint),
                ) from e
            if step % cfg.log_every == 0 or step == cfg.steps:
                logger.info("Paso %d/%d %s", step, cfg.steps, resumen_breakdown(breakdown))
            if notificar is not None:
                notificar(step, breakdown)

    final = out_dir / NOMBRE_CHECKPOINT_FINAL
    try:
        guardar_checkpoint(final, _instantanea(generador, discriminador, opt_g, opt_d, perceptual, cfg, cfg.steps))
    except CheckpointError as e:
        raise TrainingError(str(e), ultimo_checkpoint=None if ultimo_checkpoint is None else str(ultimo_checkpoint)) from e
    return ResultadoEntrenamiento(checkpoint=final, metricas=ruta_metricas, historial=historial, steps=cfg.steps)


def resumen_breakdown(breakdown: LossBreakdown) -> str:
    return " ".join(f"{clave}={valor:.4f}" for clave, valor in breakdown.como_dict().items())


# ================================
# INFERENCIA
# ================================

def cargar_generador(checkpoint: Union[str, Path, Checkpoint], esperado: Optional[ModelConfig] = None) -> Generator:
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = cargar_checkpoint(checkpoint, esperado)
    elif esperado is not None and checkpoint.model_config != esperado:
        raise CheckpointError("configuración distinta a la del checkpoint")
    return checkpoint.construir_generador()


def generate(
    v_a: AttributeVector,
    v_l: LandmarkVector,
    checkpoint: Union[str, Path, Checkpoint, Generator],
    esperado: Optional[ModelConfig] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Inferencia pura y determinista; acepta un checkpoint o un generador ya cargado."""
    generador = checkpoint if isinstance(checkpoint, Generator) else cargar_generador(checkpoint, esperado)
    return generator_forward(v_a, v_l, generador)
