"""Small-ship detection building blocks on a numpy autodiff engine."""

__version__ = "0.1.0"
