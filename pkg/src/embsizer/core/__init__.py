"""Numeric core: autodiff, layers, optimizer, RNG streams, checkpoints."""
