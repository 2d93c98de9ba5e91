"""Maritime track association with a hand-built 1D CNN-LSTM classifier."""

__version__ = "0.1.0"
