"""Latent-fitness temporal networks: VAR dynamics, impulse responses and estimation."""
__version__ = "0.1.0"
