"""Multilingual masked-LM training by distilling monolingual teachers on
truncation-balanced data, with balanced-performance and zero-shot
transfer evaluation."""

__version__ = "0.1.0"
