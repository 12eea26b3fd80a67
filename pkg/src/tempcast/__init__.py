"""CNN-LSTM next-day temperature forecasting, implemented on numpy."""

__version__ = "0.1.0"
