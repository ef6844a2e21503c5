"""
Comandos de la línea de comandos: parseo de argv, ejecución y formateo.
Independiente del canal: la salida se entrega por callbacks.
"""

from comandos.core import command_dispatch, procesar_comando

__all__ = ["procesar_comando", "command_dispatch"]
