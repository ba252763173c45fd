"""Acceptance experiments for the control lab."""
