"""Planning-under-uncertainty toolkit for urban driving.

Hierarchical intention/style filtering, anytime macro-action belief tree
search, importance-sampling trajectory refinement, and a closed-loop
synthetic-scene evaluation harness.
"""

__version__ = "0.1.0"
