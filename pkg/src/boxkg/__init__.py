"""Box-embedding engine for knowledge graphs with node features.

Implements the BoxE scoring model and its feature-aware MLP-BoxE variant,
together with dataset handling, constrained edge dropping, training,
filtered-ranking evaluation, classification baselines, and a constructive
expressiveness oracle.
"""

__version__ = "0.1.0"
