"""Synthetic experiments: closed-form and numerical PDE solutions, noise and sampling."""
