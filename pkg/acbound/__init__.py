"""
acbound
=======

Accuracy-confidence bounds for classification under a margin condition:
lower-bound families, empirical risk minimizers, closed-form bounds and a
reproducible Monte Carlo engine.
"""

__version__ = "0.1.0"
