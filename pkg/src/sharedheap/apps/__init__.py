"""Benchmark applications: binary tree sort/search and oct-tree N-body."""
