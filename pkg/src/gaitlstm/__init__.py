"""LSTM sequence classifier for vertical ground reaction force gait recordings."""

__version__ = "0.1.0"
