"""logicseq: sequence-to-sequence networks made of trainable logic gates.

Soft mode trains a relaxed, differentiable network; collapsing it yields a
discrete Boolean circuit evaluated with word-parallel bitwise operations.
"""

from ._kernels import BACKEND_NAME

__version__ = "0.1.0"

__all__ = ["BACKEND_NAME", "__version__"]
