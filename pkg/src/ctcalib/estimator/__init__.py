"""Residuals, problem assembly, the LM solver and the batch schedule."""
