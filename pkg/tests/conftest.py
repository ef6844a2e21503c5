"""
Fixtures compartidas: corpus sintético chico, modelos de la escala mínima en float64 y configuraciones de entrenamiento rápidas.
"""

from pathlib import Path
from typing import List, Optional

import numpy as np
import pytest
import torch

from core.checkpoints import Checkpoint, guardar_checkpoint
from core.dataset import EntradaSintetica, FaceRecord, escribir_corpus_sintetico, generar_corpus_sintetico, registro_desde_entrada
from core.model import CANAL_CARA, Generator, IdentityNet, IdentityNetConfig, ModelConfig, PerceptualConfig, construir_modelos
from core.train import TrainConfig, escalar_registro

TAMANO_PRUEBAS = 32


@pytest.fixture(scope="session")
def entradas() -> List[EntradaSintetica]:
    return generar_corpus_sintetico(24, 4, seed=3)


@pytest.fixture(scope="session")
def registros(entradas) -> List[FaceRecord]:
    """24 caras de 32×32, 4 identidades con 6 imágenes cada una."""
    return [registro_desde_entrada(e, TAMANO_PRUEBAS) for e in entradas]


@pytest.fixture(scope="session")
def registros_8(registros) -> List[FaceRecord]:
    return [escalar_registro(r, 8) for r in registros]


@pytest.fixture
def corpus_dir(tmp_path, entradas):
    directorio = tmp_path / "corpus"
    escribir_corpus_sintetico(directorio, entradas, TAMANO_PRUEBAS)
    return directorio


@pytest.fixture
def modelos_tiny():
    """(G, D) de la configuración 8×8 en float64."""
    return construir_modelos(ModelConfig.para_escala(8), seed=0, dtype=torch.float64)


@pytest.fixture
def perceptual_tiny():
    torch.manual_seed(1)
    red = IdentityNet(IdentityNetConfig.para_escala(8, 4)).double()
    return PerceptualConfig(network=red, layer_set=(0, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def config_tiny():
    """Fábrica de TrainConfig de 8×8 en float64, sin red perceptual por defecto."""

    def construir(**overrides) -> TrainConfig:
        valores = dict(
            steps=2,
            batch_size=4,
            scale=8,
            dtype="float64",
            ablation="adv_l2_mask",
            checkpoint_every=2,
            sample_every=2,
            log_every=1,
        )
        valores.update(overrides)
        return TrainConfig(**valores)

    return construir


@pytest.fixture
def generador_con_mascara():
    """Fábrica: generador 8×8 cuyo canal cara vale ≈1 (cara=True) o ≈0 (cara=False) en todos los píxeles."""

    def construir(cara: bool) -> Generator:
        generador, _ = construir_modelos(ModelConfig.para_escala(8), seed=0, dtype=torch.float64)
        with torch.no_grad():
            generador.head_mask.weight.zero_()
            generador.head_mask.bias.fill_(-10.0 if cara else 10.0)
            generador.head_mask.bias[CANAL_CARA] = 10.0 if cara else -10.0
        return generador

    return construir


@pytest.fixture
def checkpoint_tiny(tmp_path, modelos_tiny, generador_con_mascara):
    """Fábrica: escribe un checkpoint 8×8; con `cara` se fija la máscara del generador."""

    def escribir(cara: Optional[bool] = None, nombre: str = "tiny.pt") -> Path:
        generador, discriminador = modelos_tiny
        if cara is not None:
            generador = generador_con_mascara(cara)
        checkpoint = Checkpoint(
            model_config=generador.cfg,
            generator_state=generador.state_dict(),
            discriminator_state=discriminador.state_dict(),
            dtype="float64",
        )
        return guardar_checkpoint(tmp_path / nombre, checkpoint)

    return escribir
