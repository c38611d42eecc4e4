"""Tests for the dropout capacity package."""
