"""
Ejecución de los trabajos largos (entrenamiento y tabla de evaluación) con notificación de progreso.
Canal-agnóstico: recibe un callback para enviar mensajes.
"""

import logging
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from core.checkpoints import Checkpoint
from core.dataset import FaceRecord
from core.evaluation import EvalConfig, MethodSpec, MetricsReport, guardar_reporte, run_table
from core.losses import LossBreakdown
from core.train import ResultadoEntrenamiento, TrainConfig, train

from comandos.formatters import formatear_breakdown, formatear_resumen, formatear_tabla

logger = logging.getLogger(__name__)


def ejecutar_entrenamiento(
    corpus: Sequence[FaceRecord],
    cfg: TrainConfig,
    out_dir: Union[str, Path],
    enviar: Callable[[str], None],
    resume: Optional[Union[str, Path]] = None,
) -> ResultadoEntrenamiento:
    """
    Entrena y envía una línea de pérdidas cada log_every pasos y un resumen al terminar.
    enviar(mensaje): envía el mensaje al usuario.
    """

    def notificar(step: int, breakdown: LossBreakdown) -> None:
        if step % cfg.log_every == 0 or step == cfg.steps:
            enviar(formatear_breakdown(step, cfg.steps, breakdown))

    enviar(f"Entrenando {cfg.steps} pasos a {cfg.scale}x{cfg.scale} (seed {cfg.seed})")
    resultado = train(corpus, cfg, out_dir, resume=resume, notificar=notificar)
    enviar(formatear_resumen("ENTRENAMIENTO TERMINADO", {
        "checkpoint": resultado.checkpoint,
        "metricas": resultado.metricas,
        "pasos": resultado.steps,
    }))
    return resultado


def ejecutar_evaluacion(
    corpus: Sequence[FaceRecord],
    cfg: EvalConfig,
    ruta_reporte: Union[str, Path],
    enviar: Callable[[str], None],
    checkpoint: Optional[Union[str, Path, Checkpoint]] = None,
) -> MetricsReport:
    """Corre la grilla método × modelo de amenaza, guarda el reporte (YAML + tabla de texto) y lo envía."""
    metodos = [MethodSpec.desde_texto(m) for m in cfg.methods]
    enviar(f"Evaluando {len(metodos)} métodos bajo los modelos {', '.join(cfg.threat_models)}")
    reporte = run_table(corpus, metodos, cfg.threat_models, checkpoint, cfg)
    ruta_reporte = Path(ruta_reporte)
    guardar_reporte(ruta_reporte, reporte)
    tabla = formatear_tabla(reporte)
    ruta_reporte.with_suffix(".txt").write_text(tabla, encoding="utf-8")
    enviar(tabla)
    return reporte
