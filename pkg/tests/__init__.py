"""Random Access Transient Analysis Test Suite"""
