"""hdmae: desk-scale masked-autoencoder pre-training with context-aware
masking, on synthetic chest phantoms.

Public surface: the tensor/autodiff engine (`hdmae.tensor`), patch pipeline
(`hdmae.patches`), masking (`hdmae.masking`), MAE model (`hdmae.model`),
trainer and checkpoints (`hdmae.trainer`), phantom data (`hdmae.phantom`),
linear probe and metrics (`hdmae.probe`), and the `hdmae` CLI (`hdmae.cli`).
"""

from .backend import KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
