"""Query-efficient blackbox adversarial attacks via surrogate-ensemble weight search."""

__version__ = "0.1.0"
