"""ivrepro: deterministic reproduction of instrumental-variable analyses
from heterogeneous replication packages."""

from .workspace import PIPELINE_VERSION

__version__ = PIPELINE_VERSION
