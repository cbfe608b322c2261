"""Unit tests for dwmelt"""
