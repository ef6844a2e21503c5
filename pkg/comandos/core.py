"""
Núcleo de comandos: procesamiento de argv (canal-agnóstico).
Cada comando resuelve su configuración, deja un manifiesto en su salida y devuelve un código de salida.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from core.checkpoints import cargar_checkpoint
from core.dataset import (
    EXTENSIONES_IMAGEN,
    AttributeVector,
    FaceRecord,
    LandmarkVector,
    cargar_imagen,
    detectar_formato,
    escribir_corpus_sintetico,
    generar_corpus_sintetico,
    guardar_imagen,
    load_corpus,
    write_landmarks,
)
from core.errores import ConfigError, SwapError, UpganError
from core.evaluation import (
    MethodSpec,
    caracteristicas_perceptuales,
    caracteristicas_pixeles,
    cargar_eval_config,
    cargar_reporte,
    fid,
    obscure_records,
)
from core.model import CANAL_CARA, generator_forward
from core.swap import swap_face
from core.train import cargar_generador, cargar_train_config, config_a_dict, escalar_registro

from comandos.artefactos import NOMBRE_MANIFIESTO_CORRIDA, crear_corrida, escribir_yaml, resolver_salida
from comandos.ejecucion import ejecutar_entrenamiento, ejecutar_evaluacion
from comandos.formatters import formatear_config, formatear_error, formatear_resumen, formatear_tabla

logger = logging.getLogger(__name__)

Enviar = Callable[[str], None]

# Alias de comandos: alias -> comando completo
ALIASES = {
    "synth": "synth-corpus",
    "gen": "generate",
    "obs": "obscure",
    "evaluate": "eval",
    "rep": "report",
}

METODOS_OBSCURE = ("none", "gaussian", "pixelate", "ksame", "upgan", "grayout", "upgan-swap")
FORMATOS_CLI = ("auto", "utkface", "synthetic-manifest")


# ================================
# AUXILIARES
# ================================

def _cargar_registros(ruta: str, formato: str, tamano: Optional[int] = None) -> List[FaceRecord]:
    if formato == "auto":
        formato = detectar_formato(ruta)
    return list(load_corpus(ruta, format=formato, tamano=tamano))


def _atributos_fijos(valores: Optional[Sequence[float]]) -> Optional[AttributeVector]:
    return None if valores is None else AttributeVector.from_array(valores)


def _stem(registro: FaceRecord, indice: int) -> str:
    return Path(registro.source_id).stem if registro.source_id else f"registro_{indice:05d}"


def _mascara_rgb(probabilidades: np.ndarray) -> np.ndarray:
    return np.repeat(probabilidades[..., CANAL_CARA:CANAL_CARA + 1], 3, axis=-1)


def _imagenes_de_carpeta(ruta: Path) -> List[np.ndarray]:
    archivos = sorted(p for p in ruta.iterdir() if p.suffix.lower() in EXTENSIONES_IMAGEN)
    if not archivos:
        raise ConfigError(f"no hay imágenes en {ruta}")
    imagenes = [cargar_imagen(p)[0] for p in archivos]
    if len({im.shape for im in imagenes}) != 1:
        raise ConfigError(f"las imágenes de {ruta} tienen tamaños distintos")
    return imagenes


# ================================
# COMANDOS
# ================================

def _synth_corpus(args: argparse.Namespace, enviar: Enviar) -> None:
    salida = resolver_salida(args.out)
    config = {"n": args.n, "identities": args.identities, "size": args.size}
    entradas = generar_corpus_sintetico(args.n, args.identities, args.seed)
    escribir_corpus_sintetico(salida, entradas, args.size)
    crear_corrida("synth-corpus", salida, config, args.seed)
    enviar(formatear_resumen("CORPUS SINTÉTICO", {"registros": len(entradas), "identidades": args.identities, "salida": salida}))


def _ingest(args: argparse.Namespace, enviar: Enviar) -> None:
    """Normaliza un corpus UTKFace con sidecars a imágenes size×size y landmarks reescalados."""
    salida = resolver_salida(args.out)
    crear_corrida("ingest", salida, {"in": args.input, "size": args.size})
    registros = _cargar_registros(args.input, "utkface", args.size)
    recortados = 0
    for registro in registros:
        guardar_imagen(salida / registro.source_id, registro.image)
        write_landmarks(salida / (Path(registro.source_id).stem + ".txt"), registro.landmarks68)
        recortados += int(registro.landmarks.clamped)
    enviar(formatear_resumen("INGESTA", {"registros": len(registros), "landmarks recortados": recortados, "salida": salida}))


def _train(args: argparse.Namespace, enviar: Enviar) -> None:
    cfg = cargar_train_config(
        args.config,
        steps=args.steps,
        seed=args.seed,
        scale=args.scale,
        batch_size=args.batch_size,
        ablation=args.ablation,
        corpus=args.corpus,
        corpus_format=args.format,
    )
    if cfg.corpus is None:
        raise ConfigError("falta el corpus: use --corpus o la clave 'corpus' del archivo de configuración")
    salida = resolver_salida(args.out)
    config = config_a_dict(cfg)
    crear_corrida("train", salida, config, cfg.seed)
    enviar(formatear_config("train", config, cfg.seed))
    corpus = _cargar_registros(cfg.corpus, cfg.corpus_format)
    ejecutar_entrenamiento(corpus, cfg, salida, enviar, resume=args.resume)


def _generate(args: argparse.Namespace, enviar: Enviar) -> None:
    salida = resolver_salida(args.out)
    generador = cargar_generador(args.checkpoint)
    crear_corrida("generate", salida, {
        "checkpoint": args.checkpoint,
        "in": args.input,
        "attributes": args.attributes,
        "landmarks": args.landmarks,
        "fixed_attributes": args.fixed_attributes,
    })
    if args.input is None:
        if args.attributes is None or args.landmarks is None:
            raise ConfigError("generate requiere --in o bien --attributes y --landmarks")
        imagen, mascara = generator_forward(
            AttributeVector.from_array(args.attributes), LandmarkVector(np.array(args.landmarks)), generador
        )
        guardar_imagen(salida / "generated.png", imagen)
        guardar_imagen(salida / "generated_mask.png", _mascara_rgb(mascara))
        enviar(formatear_resumen("GENERACIÓN", {"imágenes": 1, "salida": salida}))
        return
    fijos = _atributos_fijos(args.fixed_attributes)
    registros = _cargar_registros(args.input, args.format, generador.cfg.image_size)
    for i, registro in enumerate(registros):
        imagen, mascara = generator_forward(fijos or registro.attributes, registro.landmarks, generador)
        guardar_imagen(salida / f"{_stem(registro, i)}.png", imagen)
        guardar_imagen(salida / f"{_stem(registro, i)}_mask.png", _mascara_rgb(mascara))
    enviar(formatear_resumen("GENERACIÓN", {"imágenes": len(registros), "salida": salida}))


def _obscure(args: argparse.Namespace, enviar: Enviar) -> None:
    metodo = MethodSpec(args.method, args.param)
    salida = resolver_salida(args.out)
    generador = cargar_generador(args.checkpoint) if args.checkpoint else None
    tamano = generador.cfg.image_size if generador is not None else args.size
    crear_corrida("obscure", salida, {
        "method": metodo.tipo,
        "param": metodo.parametro,
        "in": args.input,
        "checkpoint": args.checkpoint,
        "fixed_attributes": args.fixed_attributes,
        "size": tamano,
    })
    registros = _cargar_registros(args.input, args.format, tamano)
    resultados = obscure_records(registros, metodo, generador, _atributos_fijos(args.fixed_attributes))
    for i, (registro, resultado) in enumerate(zip(registros, resultados)):
        stem = _stem(registro, i)
        guardar_imagen(salida / f"{stem}.png", resultado.image)
        escribir_yaml(salida / f"{stem}.yaml", resultado.metadatos)
    enviar(formatear_resumen("OBSCURACIÓN", {"método": metodo.nombre, "imágenes": len(resultados), "salida": salida}))


def _swap(args: argparse.Namespace, enviar: Enviar) -> None:
    salida = resolver_salida(args.out)
    generador = cargar_generador(args.checkpoint)
    crear_corrida("swap", salida, {
        "checkpoint": args.checkpoint,
        "in": args.input,
        "fixed_attributes": args.fixed_attributes,
    })
    fijos = _atributos_fijos(args.fixed_attributes)
    registros = [escalar_registro(r, generador.cfg.image_size) for r in _cargar_registros(args.input, args.format)]
    omitidos = 0
    for i, registro in enumerate(registros):
        imagen, mascara = generator_forward(fijos or registro.attributes, registro.landmarks, generador)
        try:
            compuesta = swap_face(registro, imagen, mascara)
        except SwapError as e:
            omitidos += 1
            logger.warning("Intercambio omitido para %s: %s", registro.source_id, e)
            continue
        guardar_imagen(salida / f"{_stem(registro, i)}.png", compuesta)
    if omitidos == len(registros):
        raise SwapError("ningún registro produjo una máscara utilizable")
    enviar(formatear_resumen("INTERCAMBIO", {"imágenes": len(registros) - omitidos, "omitidas": omitidos, "salida": salida}))


def _eval(args: argparse.Namespace, enviar: Enviar) -> None:
    cfg = cargar_eval_config(
        args.config,
        seed=args.seed,
        scale=args.scale,
        corpus=args.corpus,
        corpus_format=args.format,
        methods=None if args.methods is None else [m for m in args.methods.split(",") if m],
    )
    if cfg.corpus is None:
        raise ConfigError("falta el corpus: use --corpus o la clave 'corpus' del archivo de configuración")
    ruta_reporte = resolver_salida(args.out)
    crear_corrida("eval", ruta_reporte.parent, {**cfg.como_dict(), "checkpoint": args.checkpoint}, cfg.seed)
    corpus = _cargar_registros(cfg.corpus, cfg.corpus_format)
    ejecutar_evaluacion(corpus, cfg, ruta_reporte, enviar, checkpoint=args.checkpoint)


def _caracteristicas(ruta: str, checkpoint: Optional[str]) -> np.ndarray:
    ruta_p = Path(ruta)
    if ruta_p.suffix == ".npy":
        return np.load(ruta_p)
    if not ruta_p.is_dir():
        raise ConfigError(f"{ruta} no es una carpeta de imágenes ni un archivo .npy")
    imagenes = _imagenes_de_carpeta(ruta_p)
    if checkpoint is None:
        return caracteristicas_pixeles(imagenes)
    perceptual = cargar_checkpoint(checkpoint).construir_perceptual()
    if perceptual is None:
        raise ConfigError(f"el checkpoint {checkpoint} no incluye red perceptual")
    return caracteristicas_perceptuales(imagenes, perceptual)


def _fid(args: argparse.Namespace, enviar: Enviar) -> None:
    valor = fid(_caracteristicas(args.a, args.checkpoint), _caracteristicas(args.b, args.checkpoint))
    if args.out is not None:
        salida = resolver_salida(args.out)
        crear_corrida("fid", salida, {"a": args.a, "b": args.b, "checkpoint": args.checkpoint, "fid": valor})
    enviar(f"{valor:.6f}")


def _report(args: argparse.Namespace, enviar: Enviar) -> None:
    ruta = Path(args.input)
    if ruta.is_file():
        candidatos = [ruta]
    elif ruta.is_dir():
        candidatos = sorted(p for p in ruta.glob("*.yaml") if p.name != NOMBRE_MANIFIESTO_CORRIDA)
    else:
        raise ConfigError(f"no existe {ruta}")
    reportes = [cargar_reporte(p) for p in candidatos]
    reportes = [r for r in reportes if r.filas]
    if not reportes:
        raise ConfigError(f"no hay reportes de evaluación en {ruta}")
    for reporte in reportes:
        enviar(formatear_tabla(reporte))


COMANDOS: Dict[str, Callable[[argparse.Namespace, Enviar], None]] = {
    "synth-corpus": _synth_corpus,
    "ingest": _ingest,
    "train": _train,
    "generate": _generate,
    "obscure": _obscure,
    "swap": _swap,
    "eval": _eval,
    "fid": _fid,
    "report": _report,
}


# ================================
# PARSER
# ================================

def construir_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="upgan", description="Obscuración de rostros que preserva utilidad")
    sub = parser.add_subparsers(dest="comando", metavar="comando")

    p = sub.add_parser("synth-corpus", help="Genera un corpus sintético determinista")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--identities", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="Normaliza un corpus UTKFace con sidecars de 68 puntos")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="Entrena UP-GAN")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--corpus")
    p.add_argument("--format", choices=FORMATOS_CLI)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=int, choices=(8, 32, 64, 128))
    p.add_argument("--batch-size", type=int)
    p.add_argument("--ablation", choices=("adv_l2", "adv_l2_mask", "full"))
    p.add_argument("--resume")

    p = sub.add_parser("generate", help="Genera caras desde (v_a, v_l)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--in", dest="input")
    p.add_argument("--format", choices=FORMATOS_CLI, default="auto")
    p.add_argument("--attributes", type=float, nargs=3, metavar=("EDAD", "GENERO", "TONO"))
    p.add_argument("--landmarks", type=float, nargs=14)
    p.add_argument("--fixed-attributes", type=float, nargs=3, metavar=("EDAD", "GENERO", "TONO"))

    p = sub.add_parser("obscure", help="Aplica un método de obscuración a un corpus")
    p.add_argument("--method", required=True, choices=METODOS_OBSCURE)
    p.add_argument("--param", type=int)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=FORMATOS_CLI, default="auto")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--checkpoint")
    p.add_argument("--fixed-attributes", type=float, nargs=3, metavar=("EDAD", "GENERO", "TONO"))

    p = sub.add_parser("swap", help="Intercambia la cara generada sobre la original")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=FORMATOS_CLI, default="auto")
    p.add_argument("--fixed-attributes", type=float, nargs=3, metavar=("EDAD", "GENERO", "TONO"))

    p = sub.add_parser("eval", help="Tabla de identificación (modelos I y II) y FID")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--corpus")
    p.add_argument("--format", choices=FORMATOS_CLI)
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--methods", help="lista separada por comas, p. ej. none,gaussian-5,pixelate-8")

    p = sub.add_parser("fid", help="FID entre dos carpetas de imágenes o archivos .npy de características")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out")

    p = sub.add_parser("report", help="Imprime la tabla de un reporte de evaluación")
    p.add_argument("--in", dest="input", required=True)

    return parser


def procesar_comando(argv: Sequence[str], enviar: Enviar, enviar_error: Optional[Enviar] = None) -> int:
    """
    Procesa argv y retorna el código de salida: 0 éxito, 1 fallo en ejecución, 2 uso incorrecto.
    enviar(mensaje): salida normal; enviar_error(mensaje): errores estructurados.
    """
    enviar_error = enviar_error or enviar
    argv = list(argv)
    if argv:
        argv[0] = ALIASES.get(argv[0], argv[0])
    parser = construir_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    if args.comando is None:
        enviar_error(parser.format_usage().rstrip())
        return 2
    try:
        COMANDOS[args.comando](args, enviar)
    except UpganError as e:
        logger.error("Comando %s falló: %s", args.comando, e)
        enviar_error(formatear_error(e))
        return 1
    except Exception as e:
        logger.error("Fallo inesperado en %s", args.comando, exc_info=True)
        enviar_error(formatear_error(e))
        return 1
    return 0


def command_dispatch(argv: Sequence[str]) -> int:
    return procesar_comando(argv, print, lambda mensaje: print(mensaje, file=sys.stderr))
