"""Desk-scale laboratory for collaborative knowledge-graph question answering.

Three panelist agents each own one shard of a synthetic knowledge graph; a
moderator agent decomposes cross-graph questions into one-hop sub-questions,
polls the panelists, and learns the collaboration policy by policy gradient.
"""

__version__ = "0.1.0"
