"""Reference scorer service: wraps a pretrained masked LM and its tokenizer
behind the HTTP+JSON fill-mask protocol (GET /info, POST /tokenize,
POST /fill)."""

__version__ = "0.1.0"

from .model import SPAN_SENTINEL, LoadedModel, ServiceError, load_model

__all__ = ["SPAN_SENTINEL", "LoadedModel", "ServiceError", "load_model", "__version__"]
