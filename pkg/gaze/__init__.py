"""
Gaze estimation package
Two-layer gaze pipeline for table-top human-robot interaction: keypoint
features, gaze classifier, confidence-gated gaze regressor and 3D reconstruction.
"""

__version__ = "1.0.0"
__author__ = "Gaze Pipeline Team"
