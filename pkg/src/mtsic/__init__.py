"""Multiband infrared colorisation: spectral attention, wavelet fusion, and a
statistics discriminator on a small numpy autodiff core."""

__version__ = "0.1.0"
