"""Temporal text-attributed graph modeling.

Pipeline: ingest interaction logs with node and edge texts, extract
time-stamped neighborhood summaries with an LLM along a per-node reasoning
chain, embed the texts, co-encode semantics and structure with a cross-modal
mixer, and train/evaluate on temporal link prediction and node classification.
"""

__version__ = "0.1.0"
