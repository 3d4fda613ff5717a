"""Nonlocal Monge-Ampere operator: evaluation, barriers and a global solver."""
