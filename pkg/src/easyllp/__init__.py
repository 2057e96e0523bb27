"""Debiased learning from label proportions."""
