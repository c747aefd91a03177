"""Underwater neural rendering: light field extraction, MHB-Unet rendering,
training and evaluation, on a small numpy autodiff engine."""

__version__ = "0.1.0"
