"""Integration tests for the ballfield package."""
