"""
Tests for msg-flow-policy.

Unit tests per module, oracle-backed composition scenarios, and end-to-end
CLI runs from demonstrations to result tables.
"""
