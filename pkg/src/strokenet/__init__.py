"""Handwriting-kinematics pipeline for subject-level Alzheimer's screening on synthetic cohorts."""

__version__ = "0.1.0"
