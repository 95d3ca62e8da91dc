"""Evaluation framework and audio features for disfluency detection.

Timeline algebra over primary/collateral tracks, time-based detection and
identification metrics, the speech efficiency score, a log-mel / F0 front
end, multi-scale audio span features and a frame-classifier baseline.
"""

__version__ = "0.1.0"
