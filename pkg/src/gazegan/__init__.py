"""Personality-conditioned GAN for eye-tracking windows.

Submodules: ``numerics`` (tensors, autodiff, Adam), ``dataio``, ``blinkcodec``,
``cgan``, ``evaluation``, ``anim``, ``checkpoint``, ``config`` and ``cli``.
"""

__version__ = "0.1.0"
