"""Numerical core: geometry, view synthesis, losses, masking, layers, refinement and synthetic scenes."""
