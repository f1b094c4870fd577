"""Demonstration synthesis from a single source trajectory."""
