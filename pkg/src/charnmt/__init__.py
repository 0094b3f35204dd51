"""Desk-scale attention NMT: BPE subword encoder, character-level decoders."""

__version__ = "0.1.0"
