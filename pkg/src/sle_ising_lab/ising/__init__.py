"""Lattice domains, exact enumeration, discrete observables and Monte Carlo."""
