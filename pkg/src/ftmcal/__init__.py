"""Unsupervised estimation of unknown Wi-Fi AP coordinates and FTM calibration curves."""
