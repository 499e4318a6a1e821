"""Autodiff engine, layers, the fusion network, training and checkpoints."""
