"""Directed acyclic graph autoregressive (DAGAR) models for areal data.

Precision-matrix construction for ordered and order-free DAGAR and CAR
priors, sparse factorisations, MCMC fitting of Gaussian and Poisson
hierarchical models, and the assessment metrics used to compare them.
"""

__version__ = "0.1.0"
