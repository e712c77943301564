"""Guided adversarial co-training (AdaGAT) at desk scale.

Submodules: ``autodiff`` (reverse-mode tape), ``nn`` (models, SGD,
checkpoints), ``losses``, ``attacks``, ``data``, ``training``,
``landscape`` and ``harness``/``cli`` for experiment orchestration.
"""

__version__ = "0.1.0"
