"""Modular seq2seq layers trained by multi-grained replacement, assembled to a budget."""
__version__ = "0.1.0"
