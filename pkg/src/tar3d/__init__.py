"""tar3d: two-stage autoregressive 3D shape generation at desk scale.

Stage 1 is a triplane VQ-VAE that encodes surface point clouds into discrete
codebook indices and decodes them back to a neural occupancy field. Stage 2 is
a decoder-only transformer with a triplane rotary position encoding that
generates the index sequence conditioned on a prompt embedding.
"""

__version__ = "0.1.0"
