"""
Canal CLI: ejecuta un comando y devuelve su código de salida.
Los mensajes normales van a stdout y los errores a stderr, con estilos ANSI solo si la salida es una TTY.
"""

import logging
import os
import re
import sys
from typing import List, Optional

from dotenv import load_dotenv
load_dotenv()

from comandos.core import procesar_comando

NIVEL_LOG = os.environ.get("UPGAN_LOG_LEVEL", "INFO").upper()

# ANSI: bold \033[1m, red \033[31m, reset \033[0m
_ANSI_BOLD = "\033[1m"
_ANSI_RED = "\033[31m"
_ANSI_RESET = "\033[0m"


def _mensaje_para_consola(texto: str, stream=None) -> str:
    """Resalta títulos en mayúsculas y líneas error=... si la salida es una TTY."""
    stream = stream or sys.stdout
    if not (hasattr(stream, "isatty") and stream.isatty()):
        return texto
    out = re.sub(r"^([A-ZÁÉÍÓÚÑ ]{4,})$", _ANSI_BOLD + r"\1" + _ANSI_RESET, texto, flags=re.MULTILINE)
    out = re.sub(r"^(error=\S+)", _ANSI_RED + r"\1" + _ANSI_RESET, out)
    return out


def _enviar_cli(mensaje: str) -> None:
    print(_mensaje_para_consola(mensaje))


def _enviar_error_cli(mensaje: str) -> None:
    print(_mensaje_para_consola(mensaje, sys.stderr), file=sys.stderr)


def configurar_logging(nivel: str = NIVEL_LOG) -> None:
    logging.basicConfig(
        level=getattr(logging, nivel, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[List[str]] = None) -> int:
    configurar_logging()
    argv = sys.argv[1:] if argv is None else argv
    return procesar_comando(argv, _enviar_cli, _enviar_error_cli)


if __name__ == "__main__":
    sys.exit(main())
