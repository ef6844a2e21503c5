"""
Canales de entrada/salida: por ahora solo la consola.
"""
