"""Constrained GAN evasion attacks against flow-based intrusion detectors."""
import torch

torch.set_default_dtype(torch.float64)

__version__ = "0.1.0"
