"""embed_export: materialize caption, event-distribution, and embedding
files in the semmix toolkit's JSON formats.

This package never imports the toolkit; it talks to it purely through the
documented file schemas (manifest, caption JSONL, {space, dim, values[,
modality]} JSON). Model identifiers are config strings so real checkpoints
can be swapped in; the shipped ``stub:`` backends are deterministic,
content-derived reference implementations that exercise the full file
contract offline.
"""

from .jobs import ExportJob, load_export_manifest
from .captions import export_captions
from .tagger import export_event_dist
from .embedder import export_embeddings

__version__ = "0.1.0"
