"""Prior-guided synthetic quadruped pose data: VAE pose prior, pose filter,
capsule renderer, style fusion, dataset builder and PCK evaluation."""

__version__ = "0.1.0"
