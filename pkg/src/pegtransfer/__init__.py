"""
Paquete del simulador de transferencia de bloques entre pegs
"""
