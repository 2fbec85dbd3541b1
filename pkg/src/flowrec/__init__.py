"""Flowchart structure recovery: detections + OCR in, directed graph out.

The package is organised around one pass per module:

- :mod:`flowrec.geometry` -- axis-aligned box primitives every rule is built on
- :mod:`flowrec.ingest` -- wire schemas for detections and OCR tokens
- :mod:`flowrec.fuse` -- text-to-object assignment and reading order
- :mod:`flowrec.assembly` -- arrow anchoring, edge labels, object linking
- :mod:`flowrec.graph` -- the typed graph and its JSON form
- :mod:`flowrec.prompt` -- prompt renderings consumed by a VLM
- :mod:`flowrec.qa` -- question generation, answer matching, accuracy tables
- :mod:`flowrec.synth` -- synthetic diagram generator and noise model
- :mod:`flowrec.deteval` -- detector AP/AR evaluation
- :mod:`flowrec.cli` -- the ``flowrec`` command
"""

__version__ = "0.1.0"

from .geometry import Box, Point, NormalizedPoint  # noqa: F401
from .graph import Edge, FlowGraph, Node  # noqa: F401
from .ingest import DetectedObject, Document, ObjectClass, OcrToken  # noqa: F401
