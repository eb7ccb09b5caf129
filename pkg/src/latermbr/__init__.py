"""Beam search, MBR reranking and later-stage MBR decoding."""
