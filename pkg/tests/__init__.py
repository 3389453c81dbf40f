"""Test suite for Metric-Phase Field reconstruction"""
