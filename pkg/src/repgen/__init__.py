"""repgen: representation-conditioned toy molecule generation and latent diagnostics."""

__version__ = "0.1.0"
