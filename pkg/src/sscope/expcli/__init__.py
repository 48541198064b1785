"""Batch experiment runner: config grammar, grid expansion, persistence, reports."""
