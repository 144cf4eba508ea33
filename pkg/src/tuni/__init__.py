"""Desk-scale RGB-thermal segmentation with a from-scratch autodiff core."""
