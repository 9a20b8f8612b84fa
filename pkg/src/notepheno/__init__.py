"""notepheno: phenotype free-text clinical notes.

A multi-width convolutional text classifier with pretrained word embeddings,
n-gram and concept-dictionary baselines, confusion-matrix metrics, and
salient-phrase explanations, orchestrated by a reproducible experiment CLI.
"""

__version__ = "0.1.0"
