"""Evolutionary structured pruning with least-squares weight reconstruction."""
