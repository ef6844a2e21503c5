from typing import Tuple

import pytest
import yaml
from PIL import Image

from channels.cli import main
from comandos.artefactos import NOMBRE_MANIFIESTO_CORRIDA, crear_corrida, leer_corrida
from comandos.core import ALIASES, command_dispatch, procesar_comando
from core.evaluation import FilaReporte, MetricsReport, guardar_reporte


def _correr(*argv: str) -> Tuple[int, str, str]:
    salidas, errores = [], []
    codigo = procesar_comando(list(argv), salidas.append, errores.append)
    return codigo, "\n".join(salidas), "\n".join(errores)


def _contenido(directorio):
    return {p.relative_to(directorio).as_posix(): p.read_bytes() for p in sorted(directorio.rglob("*")) if p.is_file()}


# ================================
# CÓDIGOS DE SALIDA
# ================================

def test_comando_desconocido_es_uso_incorrecto():
    codigo, _, _ = _correr("entrenar")
    assert codigo == 2


def test_sin_comando_muestra_el_uso():
    codigo, _, errores = _correr()
    assert codigo == 2
    assert "usage" in errores


def test_help_termina_bien():
    codigo, _, _ = _correr("--help")
    assert codigo == 0


def test_error_de_ejecucion_es_estructurado(tmp_path):
    codigo, _, errores = _correr("fid", "--a", str(tmp_path / "no"), "--b", str(tmp_path / "no"))
    assert codigo == 1
    assert errores.startswith("error=ConfigError mensaje=")


def test_main_escribe_errores_en_stderr(tmp_path, capsys):
    assert main(["report", "--in", str(tmp_path / "nada.yaml")]) == 1
    capturado = capsys.readouterr()
    assert "error=ConfigError" in capturado.err
    assert capturado.out == ""


def test_command_dispatch_imprime_en_stdout_y_stderr(tmp_path, capsys):
    assert command_dispatch(["report", "--in", str(tmp_path / "falta.yaml")]) == 1
    capturado = capsys.readouterr()
    assert capturado.err.startswith("error=ConfigError mensaje=")
    assert capturado.out == ""

    guardar_reporte(tmp_path / "r.yaml", MetricsReport(filas=[FilaReporte("None", 0.9, 0.9, 0.1)]))
    assert command_dispatch(["report", "--in", str(tmp_path / "r.yaml")]) == 0
    capturado = capsys.readouterr()
    assert "None" in capturado.out
    assert capturado.err == ""


def test_manifiesto_de_corrida_ida_y_vuelta(tmp_path):
    for nombre in ("a", "b"):
        crear_corrida("obscure", tmp_path / nombre, {"in": tmp_path / "corpus", "param": (4,)}, seed=7)
    corrida = leer_corrida(tmp_path / "a")
    assert corrida.comando == "obscure"
    assert corrida.seed == 7
    assert corrida.config == {"in": str(tmp_path / "corpus"), "param": [4]}
    assert (tmp_path / "a" / NOMBRE_MANIFIESTO_CORRIDA).read_bytes() == (tmp_path / "b" / NOMBRE_MANIFIESTO_CORRIDA).read_bytes()


# ================================
# CORPUS Y FID
# ================================

def test_synth_corpus_es_reproducible_byte_a_byte(tmp_path):
    for nombre in ("a", "b"):
        codigo, salida, _ = _correr("synth", "--n", "6", "--identities", "2", "--size", "16", "--out", str(tmp_path / nombre))
        assert codigo == 0
        assert "registros: 6" in salida
    assert _contenido(tmp_path / "a") == _contenido(tmp_path / "b")
    assert leer_corrida(tmp_path / "a").comando == "synth-corpus"


def test_salida_relativa_cuelga_de_la_raiz_configurada(tmp_path, monkeypatch):
    monkeypatch.setenv("UPGAN_OUTPUT_ROOT", str(tmp_path))
    codigo, _, _ = _correr("synth-corpus", "--n", "4", "--identities", "2", "--size", "16", "--out", "corpus")
    assert codigo == 0
    assert (tmp_path / "corpus" / NOMBRE_MANIFIESTO_CORRIDA).is_file()


def test_fid_de_una_carpeta_consigo_misma(corpus_dir, capsys):
    assert main(["fid", "--a", str(corpus_dir), "--b", str(corpus_dir)]) == 0
    assert capsys.readouterr().out.strip() == "0.000000"


# ================================
# OBSCURACIÓN
# ================================

def test_obscure_deja_imagenes_sidecars_y_manifiesto(corpus_dir, tmp_path):
    salida = tmp_path / "pix"
    codigo, texto, _ = _correr(
        "obscure", "--method", "pixelate", "--param", "4", "--in", str(corpus_dir), "--out", str(salida), "--size", "32"
    )
    assert codigo == 0
    assert "Pixelation-4" in texto
    imagenes = sorted(salida.glob("*.png"))
    assert len(imagenes) == 24
    sidecar = yaml.safe_load(imagenes[0].with_suffix(".yaml").read_text())
    assert sidecar["method"] == "pixelate"
    assert sidecar["param"] == 4
    assert sidecar["source_id"] == imagenes[0].name
    assert leer_corrida(salida).config["method"] == "pixelate"


def test_obscure_upgan_sin_checkpoint_falla(corpus_dir, tmp_path):
    codigo, _, errores = _correr("obs", "--method", "upgan", "--in", str(corpus_dir), "--out", str(tmp_path / "x"))
    assert codigo == 1
    assert "error=ConfigError" in errores


def test_ingest_normaliza_imagenes_y_landmarks(corpus_dir, tmp_path):
    salida = tmp_path / "ingesta"
    codigo, texto, errores = _correr("ingest", "--in", str(corpus_dir), "--size", "16", "--out", str(salida))
    assert codigo == 0, errores
    assert "registros: 24" in texto
    imagenes = sorted(salida.glob("*.png"))
    assert len(imagenes) == 24
    assert all(p.with_suffix(".txt").is_file() for p in imagenes)
    with Image.open(imagenes[0]) as imagen:
        assert imagen.size == (16, 16)
    assert leer_corrida(salida).comando == "ingest"


def test_swap_escribe_una_imagen_por_registro(corpus_dir, tmp_path, checkpoint_tiny):
    salida = tmp_path / "swap"
    codigo, texto, errores = _correr(
        "swap", "--checkpoint", str(checkpoint_tiny(cara=True)), "--in", str(corpus_dir), "--out", str(salida)
    )
    assert codigo == 0, errores
    assert "omitidas: 0" in texto
    assert len(list(salida.glob("*.png"))) == 24


def test_swap_sin_mascaras_utilizables_falla(corpus_dir, tmp_path, checkpoint_tiny):
    codigo, _, errores = _correr(
        "swap", "--checkpoint", str(checkpoint_tiny(cara=False)), "--in", str(corpus_dir), "--out", str(tmp_path / "swap")
    )
    assert codigo == 1
    assert errores.startswith("error=SwapError")
    assert not list((tmp_path / "swap").glob("*.png"))


# ================================
# ENTRENAMIENTO, GENERACIÓN Y EVALUACIÓN
# ================================

def test_train_generate_y_obscure_upgan(corpus_dir, tmp_path):
    corrida = tmp_path / "corrida"
    codigo, salida, errores = _correr(
        "train", "--corpus", str(corpus_dir), "--out", str(corrida),
        "--steps", "2", "--scale", "8", "--batch-size", "4", "--ablation", "adv_l2_mask",
    )
    assert codigo == 0, errores
    assert "[2/2]" in salida
    checkpoint = corrida / "final.pt"
    assert checkpoint.is_file()
    assert leer_corrida(corrida).config["steps"] == 2

    codigo, _, errores = _correr(
        "gen", "--checkpoint", str(checkpoint), "--out", str(tmp_path / "gen"),
        "--attributes", "0.5", "1", "0.5", "--landmarks", *["0.5"] * 14,
    )
    assert codigo == 0, errores
    assert (tmp_path / "gen" / "generated.png").is_file()
    assert (tmp_path / "gen" / "generated_mask.png").is_file()

    codigo, _, errores = _correr(
        "obscure", "--method", "upgan", "--checkpoint", str(checkpoint),
        "--in", str(corpus_dir), "--out", str(tmp_path / "upgan"),
    )
    assert codigo == 0, errores
    assert len(list((tmp_path / "upgan").glob("*.png"))) == 24


def test_eval_y_report(corpus_dir, tmp_path):
    config = tmp_path / "eval.yaml"
    config.write_text("identifier_epochs: 1\ntest_fraction: 0.5\n")
    reporte = tmp_path / "eval" / "report.yaml"
    codigo, salida, errores = _correr(
        "eval", "--config", str(config), "--corpus", str(corpus_dir), "--out", str(reporte),
        "--scale", "8", "--methods", "none,pixelate-4",
    )
    assert codigo == 0, errores
    assert reporte.is_file()
    assert reporte.with_suffix(".txt").is_file()
    assert (reporte.parent / NOMBRE_MANIFIESTO_CORRIDA).is_file()

    codigo, tabla, _ = _correr("report", "--in", str(reporte.parent))
    assert codigo == 0
    assert "Pixelation-4" in tabla
    assert tabla == reporte.with_suffix(".txt").read_text()


def test_report_tabla_con_columnas(tmp_path):
    guardar_reporte(tmp_path / "r.yaml", MetricsReport(filas=[
        FilaReporte("None", 0.953, 0.961, 0.5),
        FilaReporte("k-same", 0.1, None, None),
    ]))
    codigo, tabla, _ = _correr("rep", "--in", str(tmp_path / "r.yaml"))
    assert codigo == 0
    encabezado, _, ninguno, ksame = tabla.splitlines()
    assert encabezado.split("  ")[0] == "Method"
    for columna in ("Threat Model I", "Threat Model II", "FID"):
        assert columna in encabezado
    assert ninguno.split() == ["None", "0.953", "0.961", "0.50"]
    assert ksame.split() == ["k-same", "0.100", "-", "-"]


@pytest.mark.parametrize("alias, comando", [("synth", "synth-corpus"), ("evaluate", "eval"), ("rep", "report")])
def test_alias_se_resuelven(alias, comando):
    assert ALIASES[alias] == comando
