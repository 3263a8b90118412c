"""diarize-forge: speaker diarization timeline, scoring, fusion and
clustering toolkit."""

from .timeline import Annotation, Turn, Uem, parse_rttm, parse_uem, write_rttm
from .metrics import DerBreakdown, der, jer
from .fusion import HypothesisSet, combine

__all__ = [
    "Annotation",
    "Turn",
    "Uem",
    "parse_rttm",
    "parse_uem",
    "write_rttm",
    "DerBreakdown",
    "der",
    "jer",
    "HypothesisSet",
    "combine",
]

__version__ = "0.1.0"
