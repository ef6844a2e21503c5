import shutil
from dataclasses import replace

import numpy as np
import pytest
import torch
import yaml
from PIL import Image

from core.checkpoints import cargar_checkpoint
from core.dataset import escribir_corpus_sintetico, generar_corpus_sintetico, load_corpus
from core.errores import CheckpointError, ConfigError, TrainingError
from core.losses import LossWeights, objetivo_generador
from core.model import ModelConfig
from core.train import (
    NOMBRE_CHECKPOINT_FINAL,
    TrainConfig,
    cargar_train_config,
    congelado,
    construir_lote,
    generate,
    guardar_train_config,
    indices_del_paso,
    leer_metricas,
    train,
)

CLAVES_METRICAS = {"step", "adv_g", "recon_l2", "mask_bce", "perceptual", "total_g", "total_d"}


def _parametros_iguales(ruta_a, ruta_b) -> bool:
    a, b = cargar_checkpoint(ruta_a), cargar_checkpoint(ruta_b)
    estados = [(a.generator_state, b.generator_state), (a.discriminator_state, b.discriminator_state)]
    return all(torch.equal(x[k], y[k]) for x, y in estados for k in x)


# ================================
# CONFIGURACIÓN
# ================================

def test_config_rechaza_valores_invalidos():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        TrainConfig(steps=0)
    with pytest.raises(ConfigError):
        TrainConfig(scale=48)
    with pytest.raises(ConfigError):
        TrainConfig(ablation="solo_l2")
    with pytest.raises(ConfigError):
        TrainConfig(dtype="float16")


def test_config_yaml_con_overrides(tmp_path):
    ruta = tmp_path / "train.yaml"
    ruta.write_text(yaml.safe_dump({
        "steps": 3,
        "batch_size": 4,
        "weights_lambda1": 2.0,
        "augment_rotation_range": [-5, 5],
    }))
    cfg = cargar_train_config(ruta, batch_size=8, seed=None)
    assert cfg.steps == 3
    assert cfg.batch_size == 8
    assert cfg.seed == 0
    assert cfg.weights == LossWeights(lambda1=2.0)
    assert cfg.augment.rotation_range == (-5.0, 5.0)


def test_config_ida_y_vuelta(tmp_path, config_tiny):
    cfg = config_tiny(steps=7)
    guardar_train_config(tmp_path / "cfg.yaml", cfg)
    assert cargar_train_config(tmp_path / "cfg.yaml") == cfg


def test_config_clave_desconocida_o_archivo_inexistente(tmp_path):
    ruta = tmp_path / "train.yaml"
    ruta.write_text("pasos: 3\n")
    with pytest.raises(ConfigError, match="pasos"):
        cargar_train_config(ruta)
    with pytest.raises(ConfigError):
        cargar_train_config(tmp_path / "no.yaml")


# ================================
# LOTES Y CONGELAMIENTO
# ================================

def test_indices_dependen_solo_de_semilla_y_paso():
    np.testing.assert_array_equal(indices_del_paso(0, 5, 24, 4), indices_del_paso(0, 5, 24, 4))
    assert not np.array_equal(indices_del_paso(0, 5, 24, 8), indices_del_paso(0, 6, 24, 8))
    assert len(indices_del_paso(0, 1, 3, 8)) == 8


def test_congelado_restaura_requires_grad(modelos_tiny):
    _, discriminador = modelos_tiny
    with congelado(discriminador):
        assert all(not p.requires_grad for p in discriminador.parameters())
    assert all(p.requires_grad for p in discriminador.parameters())


def test_paso_de_g_no_toca_gradientes_de_d(modelos_tiny, registros_8, config_tiny):
    generador, discriminador = modelos_tiny
    lote = construir_lote(registros_8, config_tiny(), step=1)
    with congelado(discriminador):
        total, _ = objetivo_generador(lote, generador, discriminador, LossWeights(lambda3=0.0))
        total.backward()
    assert all(p.grad is None for p in discriminador.parameters())
    assert all(p.grad is not None for p in generador.parameters())


# ================================
# ENTRENAMIENTO
# ================================

def test_entrenamiento_escribe_metricas_checkpoints_y_muestras(tmp_path, registros, config_tiny):
    cfg = config_tiny(steps=4)
    resultado = train(registros, cfg, tmp_path)
    metricas = leer_metricas(resultado.metricas)
    assert [m["step"] for m in metricas] == [1, 2, 3, 4]
    assert all(set(m) == CLAVES_METRICAS for m in metricas)
    assert all(np.isfinite(m["total_g"]) for m in metricas)
    assert len(resultado.historial) == 4

    assert (tmp_path / "checkpoints" / "step_000002.pt").is_file()
    assert not (tmp_path / "checkpoints" / "step_000004.pt").exists()
    assert resultado.checkpoint == tmp_path / NOMBRE_CHECKPOINT_FINAL
    assert cargar_checkpoint(resultado.checkpoint).step == 4

    muestras = sorted(p.name for p in (tmp_path / "samples").iterdir())
    assert muestras == ["step_000002.png", "step_000004.png"]
    with Image.open(tmp_path / "samples" / "step_000004.png") as grilla:
        assert grilla.size == (32, 32)


def test_entrenamiento_es_determinista(tmp_path, registros, config_tiny):
    cfg = config_tiny(steps=2)
    a = train(registros, cfg, tmp_path / "a")
    b = train(registros, cfg, tmp_path / "b")
    assert _parametros_iguales(a.checkpoint, b.checkpoint)
    assert leer_metricas(a.metricas) == leer_metricas(b.metricas)


def test_reanudar_reproduce_la_corrida_completa(tmp_path, registros, config_tiny):
    cfg = config_tiny(steps=4)
    completa = train(registros, cfg, tmp_path / "completa")
    intermedio = tmp_path / "completa" / "checkpoints" / "step_000002.pt"

    reanudada = train(registros, cfg, tmp_path / "reanudada", resume=intermedio)
    assert _parametros_iguales(completa.checkpoint, reanudada.checkpoint)
    assert leer_metricas(reanudada.metricas) == leer_metricas(completa.metricas)[2:]


def test_reanudar_descarta_metricas_posteriores_al_checkpoint(tmp_path, registros, config_tiny):
    cfg = config_tiny(steps=4)
    completa = train(registros, cfg, tmp_path / "completa")
    copia = tmp_path / "copia"
    copia.mkdir()
    shutil.copy(completa.metricas, copia / completa.metricas.name)

    reanudada = train(registros, cfg, copia, resume=tmp_path / "completa" / "checkpoints" / "step_000002.pt")
    assert leer_metricas(reanudada.metricas) == leer_metricas(completa.metricas)


def test_reanudar_con_otra_escala_falla(tmp_path, registros, config_tiny):
    completa = train(registros, config_tiny(), tmp_path / "a")
    with pytest.raises(CheckpointError):
        train(registros, config_tiny(scale=32, dtype="float32"), tmp_path / "b", resume=completa.checkpoint)


def test_valores_no_finitos_abortan_con_training_error(tmp_path, registros_8, config_tiny):
    corruptos = [replace(r, image=np.full_like(r.image, np.nan)) for r in registros_8]
    with pytest.raises(TrainingError) as error:
        train(corruptos, config_tiny(use_augmentation=False), tmp_path)
    assert error.value.ultimo_checkpoint is None


# ================================
# INFERENCIA
# ================================

def test_generate_desde_el_checkpoint_final(tmp_path, registros, config_tiny):
    resultado = train(registros, config_tiny(), tmp_path)
    registro = registros[0]
    imagen, mascara = generate(registro.attributes, registro.landmarks, resultado.checkpoint)
    assert imagen.shape == (8, 8, 3)
    assert mascara.shape == (8, 8, 2)
    otra, _ = generate(registro.attributes, registro.landmarks, resultado.checkpoint, ModelConfig.para_escala(8))
    np.testing.assert_array_equal(imagen, otra)
    with pytest.raises(CheckpointError):
        generate(registro.attributes, registro.landmarks, resultado.checkpoint, ModelConfig.para_escala(32))


@pytest.mark.slow
def test_dos_mil_pasos_reducen_la_reconstruccion_a_la_mitad(tmp_path):
    escribir_corpus_sintetico(tmp_path / "corpus", generar_corpus_sintetico(200, 20, seed=0), 32)
    corpus = list(load_corpus(tmp_path / "corpus", format="synthetic-manifest", tamano=32))
    cfg = TrainConfig(
        steps=2000, scale=32, ablation="full", checkpoint_every=1000, sample_every=1000,
        perceptual_target_accuracy=0.5,
    )
    metricas = leer_metricas(train(corpus, cfg, tmp_path / "corrida").metricas)
    assert all(np.isfinite(m["perceptual"]) for m in metricas)
    assert metricas[-1]["perceptual"] > 0.0
    # recon_l2 es una suma por muestra; por píxel se divide por S·S·3
    por_pixel = np.array([m["recon_l2"] for m in metricas]) / (32 * 32 * 3)
    promedio_paso_10 = por_pixel[:10].mean()
    assert por_pixel[-10:].mean() <= 0.5 * promedio_paso_10
