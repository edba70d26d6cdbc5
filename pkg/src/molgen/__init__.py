"""molgen: molecular graph VAE with a two-step one-shot decoder."""

__version__ = "0.1.0"
