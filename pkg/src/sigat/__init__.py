"""Sonar image classification with KNN-masked graph attention."""

__version__ = "0.1.0"
