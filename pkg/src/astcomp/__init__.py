"""Graph-attention code completion over flattened ASTs."""

__version__ = "0.1.0"

from .model import Model, ModelConfig
from .pipeline import Vocabulary, build_vocab, flatten, load_ast

__all__ = ["Model", "ModelConfig", "Vocabulary", "build_vocab", "flatten", "load_ast", "__version__"]
