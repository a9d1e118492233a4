"""Two-stage point-supervised temporal action localization.

Stage 1 learns snippet-level scores with a prototype memory and
reliability-aware attention; stage 2 learns proposal completeness and
boundary offsets on point-anchored proposals.
"""

from ._accel import backend_name
from .data import Config, Detection, GtInstance, PointAnnotation, Proposal, Tag, VideoRecord
from .synthetic import GenSpec, PointDistribution, generate_corpus

__version__ = "0.1.0"

__all__ = ["Config", "Detection", "GenSpec", "GtInstance", "PointAnnotation", "PointDistribution", "Proposal",
           "Tag", "VideoRecord", "backend_name", "generate_corpus", "__version__"]
