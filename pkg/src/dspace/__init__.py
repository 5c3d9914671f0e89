"""Few-shot DDoS detection with a dual-space prototypical network.

The package covers the full desk-scale experimental pipeline: flow-CSV
ingestion and cleaning, robust scaling, random-forest feature selection,
a from-scratch MLP (optionally attention-augmented) with exact analytic
gradients, episodic dual-space training, and a seeded benchmark harness
that reports metrics as mean +/- std over repeated runs.
"""

__version__ = "0.1.0"
