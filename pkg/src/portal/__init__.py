"""Row-level tabular transformer: typed cell encoders, masked-cell pre-training,
fine-tuning with regression target codecs and bagging."""

__version__ = "0.1.0"
