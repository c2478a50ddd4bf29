"""
File: __init__.py
Author: Chuncheng Zhang
Date: 2025-03-24
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    Self-supervised monocular depth with the LKA decoder, on numpy.
"""

__version__ = '0.1.0'
