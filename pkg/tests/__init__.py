"""Tests for the chaoscast library."""
