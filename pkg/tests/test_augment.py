import numpy as np
import pytest

from core.augment import (
    AVISO_LANDMARKS_RECORTADOS,
    AugmentConfig,
    augment_record,
    campo_elastico,
    elastic_distortion,
    random_rotation,
    rotar_registro,
    rotate_landmarks,
)
from core.dataset import AttributeVector, FaceRecord, LandmarkVector, reduce_landmarks
from core.errores import ConfigError, ValidationError


@pytest.fixture
def registro(registros):
    return registros[0]


def _registro_de_un_pixel() -> FaceRecord:
    """16×16 con un único píxel de máscara en (fila 3, columna 5) y todos los landmarks en su centro."""
    imagen = np.zeros((16, 16, 3))
    imagen[3, 5] = 1.0
    mascara = np.zeros((16, 16), dtype=np.uint8)
    mascara[3, 5] = 1
    landmarks68 = np.tile([5.5, 3.5], (68, 1))
    return FaceRecord(
        image=imagen,
        attributes=AttributeVector(age=0.5, gender=0, skin_tone=0.5),
        landmarks=reduce_landmarks(landmarks68, (16, 16)),
        landmarks68=landmarks68,
        mask=mascara,
    )


def test_config_valida_parametros():
    with pytest.raises(ConfigError):
        AugmentConfig(elastic_alpha=-1.0)
    with pytest.raises(ConfigError):
        AugmentConfig(elastic_sigma=0.0)
    with pytest.raises(ConfigError):
        AugmentConfig(rotation_range=(-200.0, 0.0))


# ================================
# DISTORSIÓN ELÁSTICA
# ================================

def test_elastica_con_alpha_cero_es_identidad(registro):
    salida = elastic_distortion(registro, alpha=0.0, sigma=6.0, seed=1)
    np.testing.assert_array_equal(salida.image, registro.image)
    np.testing.assert_array_equal(salida.mask, registro.mask)
    np.testing.assert_array_equal(salida.landmarks68, registro.landmarks68)
    assert salida.image is not registro.image


def test_elastica_es_determinista(registro):
    a = elastic_distortion(registro, alpha=4.0, sigma=2.0, seed=5)
    b = elastic_distortion(registro, alpha=4.0, sigma=2.0, seed=5)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.landmarks68, b.landmarks68)
    c = elastic_distortion(registro, alpha=4.0, sigma=2.0, seed=6)
    assert not np.array_equal(a.image, c.image)


def test_campo_elastico_acotado_por_alpha():
    dx, dy = campo_elastico((32, 32), alpha=8.0, sigma=6.0, seed=2)
    assert np.abs(dx).max() <= 8.0
    assert np.abs(dy).max() <= 8.0


def test_elastica_desplaza_landmarks_a_lo_sumo_alpha(registros):
    registro = registros[3]
    salida = elastic_distortion(registro, alpha=8.0, sigma=6.0, seed=4)
    desplazamiento = np.abs(salida.landmarks68 - registro.landmarks68)
    assert desplazamiento.max() <= 8.0 + 1e-9


def test_mascara_sigue_binaria_tras_aumentar(registro):
    salida = augment_record(registro, AugmentConfig(elastic_alpha=3.0, elastic_sigma=2.0), indice=7)
    assert set(np.unique(salida.mask)) <= {0, 1}
    assert salida.mask.dtype == registro.mask.dtype
    assert salida.image.min() >= 0.0 and salida.image.max() <= 1.0


def test_aumento_requiere_anotaciones(registro):
    sin_mascara = FaceRecord(image=registro.image, attributes=registro.attributes, landmarks=registro.landmarks)
    with pytest.raises(ValidationError):
        elastic_distortion(sin_mascara, alpha=1.0, sigma=1.0, seed=0)


# ================================
# ROTACIÓN
# ================================

def test_rotacion_con_rango_nulo_es_identidad(registro):
    salida = random_rotation(registro, (0.0, 0.0), seed=3)
    np.testing.assert_array_equal(salida.image, registro.image)
    np.testing.assert_array_equal(salida.mask, registro.mask)
    np.testing.assert_array_equal(salida.landmarks.as_array(), registro.landmarks.as_array())


def test_dos_rotaciones_de_90_igual_a_una_de_180(rng):
    puntos = rng.uniform(0, 128, size=(68, 2))
    dos_veces = rotate_landmarks(rotate_landmarks(puntos, 90.0, (64, 64)), 90.0, (64, 64))
    una_vez = rotate_landmarks(puntos, 180.0, (64, 64))
    np.testing.assert_allclose(dos_veces, una_vez, atol=1e-9)


def test_rotacion_de_30_grados_forma_cerrada():
    rotado = rotate_landmarks(np.array([[0.75, 0.5]]), 30.0, (0.5, 0.5))
    theta = np.deg2rad(30.0)
    esperado = [0.5 + 0.25 * np.cos(theta), 0.5 + 0.25 * np.sin(theta)]
    np.testing.assert_allclose(rotado[0], esperado, atol=1e-12)


def test_rotacion_de_90_mueve_mascara_y_landmarks_juntos():
    salida = rotar_registro(_registro_de_un_pixel(), 90.0)
    np.testing.assert_allclose(salida.landmarks68[0], [12.5, 5.5], atol=1e-9)
    assert salida.mask.sum() == 1
    assert salida.mask[5, 12] == 1
    assert salida.image[5, 12].max() == pytest.approx(1.0)


def test_rotar_y_reducir_conmuta_con_reducir_y_rotar(registro):
    salida = rotar_registro(registro, 20.0)
    alto, ancho = registro.tamano
    reducido_y_rotado = rotate_landmarks(registro.landmarks.as_pairs() * [ancho, alto], 20.0, (ancho / 2, alto / 2))
    esperado = np.clip(reducido_y_rotado / [ancho, alto], 0.0, 1.0)
    np.testing.assert_allclose(salida.landmarks.as_pairs(), esperado, atol=1e-6)


def test_landmark_rotado_fuera_de_la_imagen_se_recorta_y_avisa(caplog):
    base = _registro_de_un_pixel()
    esquina = np.tile([0.5, 0.5], (68, 1))
    registro = FaceRecord(
        image=base.image,
        attributes=base.attributes,
        landmarks=reduce_landmarks(esquina, (16, 16)),
        landmarks68=esquina,
        mask=base.mask,
    )
    salida = rotar_registro(registro, 45.0)
    assert salida.landmarks68[0, 1] < 0.0
    assert salida.landmarks.clamped
    assert AVISO_LANDMARKS_RECORTADOS in salida.avisos
    assert isinstance(salida.landmarks, LandmarkVector)
    assert "recortado" in caplog.text


def test_aumento_identidad_con_alpha_y_rango_nulos(registro):
    cfg = AugmentConfig(elastic_alpha=0.0, rotation_range=(0.0, 0.0))
    salida = augment_record(registro, cfg, indice=11)
    np.testing.assert_array_equal(salida.image, registro.image)
    np.testing.assert_array_equal(salida.landmarks68, registro.landmarks68)
    assert AVISO_LANDMARKS_RECORTADOS not in salida.avisos
