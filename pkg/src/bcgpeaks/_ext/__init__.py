"""Compiled kernels (Cython). Absent when the package is built without a compiler."""
