"""mtdump: LM/NMT log-probability and attention exporter (TDWB format)."""

from .export import ExportError, ExportJob, LMScorer, MTScorer, PairEntry, run_export
from .format import PairDump, Track, write_manifest, write_pair

__version__ = "0.1.0"
