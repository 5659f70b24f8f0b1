"""Multi-model consensus engine.

Turns recorded responses from several language models into per-answer
feature vectors and similarity graphs, trains meta-models that predict
which answer is correct, and evaluates them against voting baselines.
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
