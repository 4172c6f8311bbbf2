"""
Test suite for the CMixer workbench
"""
