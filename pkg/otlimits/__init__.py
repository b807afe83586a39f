"""
OT Limits Lab - граничні теореми оптимального транспорту на скінченних дискретизаціях.
"""
