"""Entity knowledge injection for document-level relation extraction."""

from kire.datamodel import Config, CoreferenceTriple, Document, Entity, KGSubset, Mention, RelationFact
from kire.errors import ConfigError, DataError, DivergenceError, KIREError

__version__ = "0.1.0"

__all__ = [
    "Config",
    "ConfigError",
    "CoreferenceTriple",
    "DataError",
    "DivergenceError",
    "Document",
    "Entity",
    "KGSubset",
    "KIREError",
    "Mention",
    "RelationFact",
]
