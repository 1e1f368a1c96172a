"""
Test package for voltrisk.
"""
