"""drift-forge: a closed-loop lab comparing a brush-model front tire against a
small learned network inside an NMPC drift controller."""

__version__ = "0.1.0"
