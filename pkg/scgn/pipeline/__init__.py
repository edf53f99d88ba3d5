"""Triplet loading, preprocessing and the synthetic scene generator."""
