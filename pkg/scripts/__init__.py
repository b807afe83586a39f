"""
Консольні утиліти лабораторії.
"""
