"""
Núcleo del dominio UP-GAN: datos, modelos, pérdidas, entrenamiento, métodos de obscuración y evaluación.
"""

__version__ = "0.1.0"
