"""
Puntos de entrada de la aplicación.
"""
