"""Reconstruction attacks: model inversion, feature-space hijacking, fake gradients."""
