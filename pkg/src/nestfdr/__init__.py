"""Multivariate FDR control by nested rejection regions."""
