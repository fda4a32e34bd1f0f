"""Verification of hierarchical artifact systems.

A specification describes a tree of tasks operating over a read-only
relational database and exchanging data through input/return variable maps;
properties are temporal formulas over the local runs of tasks.  The package
parses both, decides whether every run satisfies the property, and produces
a concrete finite database plus a replayable run tree when it does not.
"""

from .model import (
    Database,
    HasSpec,
    SchemaClass,
    classify_schema,
    validate_spec,
)
from .frontend import (
    ParseError,
    dump_database,
    load_database,
    parse_property,
    parse_spec,
    render_property,
    render_spec,
)
from .normalize import NormalizeError, normalize
from .property_ast import HltlProperty

__version__ = "0.1.0"

__all__ = [
    "Database",
    "HasSpec",
    "HltlProperty",
    "NormalizeError",
    "ParseError",
    "SchemaClass",
    "__version__",
    "classify_schema",
    "dump_database",
    "load_database",
    "normalize",
    "parse_property",
    "parse_spec",
    "render_property",
    "render_spec",
    "validate_spec",
]
