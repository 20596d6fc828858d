"""Desk-scale dense retrieval lab.

Builds synthetic QA worlds, filters minimally edited question variants,
trains a hashed dual encoder with passage- and query-side contrastive
losses, and evaluates ranking, retrieval, and contrast consistency.
"""

__version__ = "0.1.0"
