import numpy as np
import pytest
import torch

from core.dataset import AttributeVector, LandmarkVector
from core.errores import ConfigError, CorpusError, ShapeError
from core.model import (
    Discriminator,
    Generator,
    IdentityNet,
    IdentityNetConfig,
    ModelConfig,
    PerceptualConfig,
    contar_parametros,
    discriminator_forward,
    generator_forward,
    perceptual_features,
    pretrain_perceptual,
)

V_A = AttributeVector(age=0.3, gender=1, skin_tone=0.25)
V_L = LandmarkVector(points=np.linspace(0.2, 0.8, 14))


def _poner_en_cero(modulo: torch.nn.Module) -> None:
    with torch.no_grad():
        for parametro in modulo.parameters():
            parametro.zero_()


# ================================
# GENERADOR
# ================================

@pytest.mark.parametrize("escala", [128, 32])
def test_generador_formas_de_salida(escala):
    torch.manual_seed(0)
    generador = Generator(ModelConfig.para_escala(escala)).eval()
    imagen, mascara = generator_forward(V_A, V_L, generador)
    assert imagen.shape == (escala, escala, 3)
    assert mascara.shape == (escala, escala, 2)
    assert imagen.min() >= 0.0 and imagen.max() <= 1.0
    np.testing.assert_allclose(mascara.sum(axis=-1), 1.0, atol=1e-5)


def test_traza_de_formas_a_128():
    generador = Generator(ModelConfig.para_escala(128))
    formas = generador.trazar_formas(torch.zeros(1, 17))
    assert formas == [
        (1, 1024),
        (1, 512, 4, 4),
        (1, 256, 8, 8),
        (1, 128, 16, 16),
        (1, 64, 32, 32),
        (1, 32, 64, 64),
        (1, 16, 128, 128),
        (1, 16, 128, 128),
        (1, 3, 128, 128),
        (1, 2, 128, 128),
    ]


def test_traza_de_formas_a_32_usa_tres_bloques():
    formas = Generator(ModelConfig.para_escala(32)).trazar_formas(torch.zeros(2, 17))
    lados = [f[-1] for f in formas[1:-3]]
    assert lados == [4, 8, 16, 32]


def test_cantidad_de_parametros_depende_solo_de_la_config():
    cfg = ModelConfig.para_escala(32)
    torch.manual_seed(0)
    a = Generator(cfg)
    torch.manual_seed(1)
    b = Generator(cfg)
    assert contar_parametros(a) == contar_parametros(b)
    assert contar_parametros(Generator(ModelConfig.para_escala(8))) < contar_parametros(a)


def test_generador_en_cero_da_imagen_constante():
    generador = Generator(ModelConfig.para_escala(32))
    _poner_en_cero(generador)
    imagen, mascara = generator_forward(V_A, V_L, generador)
    np.testing.assert_allclose(imagen, 0.5)
    np.testing.assert_allclose(mascara, 0.5)


def test_generador_rechaza_dimension_incorrecta():
    generador = Generator(ModelConfig.para_escala(8))
    with pytest.raises(ShapeError):
        generator_forward(np.zeros(2), V_L, generador)
    with pytest.raises(ShapeError):
        generador(torch.zeros(1, 16))


def test_generador_es_determinista(modelos_tiny):
    generador, _ = modelos_tiny
    a = generator_forward(V_A, V_L, generador)
    b = generator_forward(V_A, V_L, generador)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_escala_invalida():
    with pytest.raises(ConfigError):
        ModelConfig(image_size=48)


# ================================
# DISCRIMINADOR
# ================================

def test_discriminador_en_intervalo_abierto(rng):
    torch.manual_seed(0)
    discriminador = Discriminator(ModelConfig.para_escala(32))
    probabilidad = discriminator_forward(rng.uniform(size=(32, 32, 3)), discriminador)
    assert 0.0 < probabilidad < 1.0


def test_discriminador_determinista_y_en_cero(rng):
    torch.manual_seed(0)
    discriminador = Discriminator(ModelConfig.para_escala(32))
    imagen = rng.uniform(size=(32, 32, 3))
    assert discriminator_forward(imagen, discriminador) == discriminator_forward(imagen, discriminador)
    _poner_en_cero(discriminador)
    assert discriminator_forward(imagen, discriminador) == 0.5


def test_discriminador_rechaza_forma_incorrecta():
    discriminador = Discriminator(ModelConfig.para_escala(32))
    with pytest.raises(ShapeError):
        discriminator_forward(np.zeros((16, 16, 3)), discriminador)


# ================================
# RED PERCEPTUAL
# ================================

def _perceptual(capas=(0, 1, 2)) -> PerceptualConfig:
    torch.manual_seed(0)
    return PerceptualConfig(network=IdentityNet(IdentityNetConfig(num_clases=3)), layer_set=capas)


def test_caracteristicas_perceptuales_por_capa(rng):
    cfg = _perceptual()
    imagen = rng.uniform(size=(32, 32, 3))
    rasgos = perceptual_features(imagen, cfg)
    assert len(rasgos) == 3
    assert [tuple(r.shape) for r in rasgos] == [(1, 16, 16, 16), (1, 32, 8, 8), (1, 64, 4, 4)]
    for a, b in zip(rasgos, perceptual_features(imagen, cfg)):
        assert torch.equal(a, b)


def test_caracteristicas_perceptuales_son_continuas(rng):
    cfg = _perceptual((0,))
    imagen = rng.uniform(0.1, 0.9, size=(32, 32, 3))
    base = perceptual_features(imagen, cfg)[0]
    perturbada = perceptual_features(imagen + 1e-3, cfg)[0]
    diferencia = (perturbada - base).abs().sum()
    assert torch.isfinite(diferencia)
    assert diferencia > 0


def test_red_perceptual_queda_congelada():
    cfg = _perceptual()
    assert not cfg.network.training
    assert all(not p.requires_grad for p in cfg.network.parameters())


@pytest.mark.parametrize("capas", [(), (4,), (-1,)])
def test_conjunto_de_capas_invalido(capas):
    with pytest.raises(ConfigError):
        _perceptual(capas)


def test_pretrain_perceptual_requiere_identidades(registros_8):
    un_solo = [r for r in registros_8 if r.identity == "id_000"]
    with pytest.raises(CorpusError):
        pretrain_perceptual(un_solo, epochs=1, seed=0)


def test_pretrain_perceptual_registra_capas_por_defecto(registros_8):
    cfg = pretrain_perceptual(registros_8, epochs=2, seed=0, precision_objetivo=0.0)
    assert cfg.layer_set == (0, 1)
    assert cfg.identidades == ["id_000", "id_001", "id_002", "id_003"]
    assert 0.0 <= cfg.precision <= 1.0
