"""gstack test suite."""
