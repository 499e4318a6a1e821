"""Radar egomotion toolkit: simulation, panoramic encoding, registration baselines,
an attention-fused recurrent network trained from scratch, and trajectory evaluation."""

__version__ = "0.1.0"
