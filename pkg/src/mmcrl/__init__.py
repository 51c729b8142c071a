"""Multimodal causal representation learning with partially shared latents."""

__version__ = "0.1.0"
