"""Laplacian-eigenfunction neural operators for reaction-diffusion dynamics."""
