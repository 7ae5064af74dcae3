"""Speech emotion recognition: MFCC features, a numpy LSTM, and an SVM baseline."""

__version__ = "0.1.0"
