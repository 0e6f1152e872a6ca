"""Search-based generation of driving scenarios against a built-in planner."""

__version__ = "0.1.0"
