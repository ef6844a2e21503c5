"""
Punto de entrada por CLI.
Uso: python -m entrypoints.cli <comando> [opciones]   (synth-corpus, ingest, train, generate, obscure, swap, eval, fid, report)
"""

import sys

from channels.cli import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
