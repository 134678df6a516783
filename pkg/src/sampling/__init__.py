"""Sparse hypercolumn sampling and pixel mini-batch construction."""
