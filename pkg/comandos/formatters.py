"""
Formateo de salidas de texto (canal-agnóstico).
"""

import logging
from typing import Any, Dict, List, Optional

from core.errores import UpganError
from core.evaluation import MetricsReport
from core.losses import LossBreakdown

logger = logging.getLogger(__name__)

COLUMNAS_TABLA = ("Method", "Threat Model I", "Threat Model II", "FID")
SEPARADOR = "=" * 30


def _celda(valor: Optional[float], decimales: int) -> str:
    return "-" if valor is None else f"{valor:.{decimales}f}"


def formatear_tabla(reporte: MetricsReport) -> str:
    """Tabla alineada: una fila por método, columnas Threat Model I / Threat Model II / FID."""
    filas: List[List[str]] = [list(COLUMNAS_TABLA)]
    for fila in reporte.filas:
        filas.append([fila.metodo, _celda(fila.threat_i, 3), _celda(fila.threat_ii, 3), _celda(fila.fid, 2)])
    anchos = [max(len(f[i]) for f in filas) for i in range(len(COLUMNAS_TABLA))]

    def renglon(celdas: List[str]) -> str:
        primera = celdas[0].ljust(anchos[0])
        resto = [c.rjust(a) for c, a in zip(celdas[1:], anchos[1:])]
        return "  ".join([primera] + resto).rstrip()

    lineas = [renglon(filas[0]), "-" * len(renglon(filas[0]))]
    lineas.extend(renglon(f) for f in filas[1:])
    return "\n".join(lineas) + "\n"


def formatear_config(comando: str, config: Dict[str, Any], seed: Optional[int] = None) -> str:
    mensaje = f"{comando.upper()}\n"
    mensaje += SEPARADOR + "\n"
    if seed is not None:
        mensaje += f"seed: {seed}\n"
    for clave, valor in config.items():
        mensaje += f"{clave}: {valor}\n"
    return mensaje


def formatear_breakdown(step: int, total_steps: int, breakdown: LossBreakdown) -> str:
    """Una línea por paso registrado."""
    return (
        f"[{step}/{total_steps}] "
        f"G={breakdown.total_g:.4f} D={breakdown.total_d:.4f} "
        f"adv={breakdown.adv_g:.4f} l2={breakdown.recon_l2:.4f} "
        f"mask={breakdown.mask_bce:.4f} perc={breakdown.perceptual:.4f}"
    )


def formatear_error(error: Exception) -> str:
    """error=<Clase> mensaje=<...>, en una sola línea."""
    mensaje = " ".join(str(error).split())
    linea = f"error={type(error).__name__} mensaje={mensaje}"
    if isinstance(error, UpganError):
        for atributo in ("token", "termino", "ultimo_checkpoint", "precision"):
            valor = getattr(error, atributo, None)
            if valor is not None:
                linea += f" {atributo}={valor}"
    return linea


def formatear_resumen(titulo: str, datos: Dict[str, Any]) -> str:
    mensaje = f"{titulo}\n{SEPARADOR}\n"
    for clave, valor in datos.items():
        mensaje += f"{clave}: {valor}\n"
    return mensaje
