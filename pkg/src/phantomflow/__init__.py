"""Ultrasound phantom workflow: synthetic scans, classical segmentation,
frame scoring, surface reconstruction and resection-volume augmentation."""

__version__ = "0.1.0"
