"""Attentive CNN-convLSTM video saliency prediction on a numpy tensor engine."""

__version__ = "0.4.0"
