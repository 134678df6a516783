"""Convolutional layers and the tapped backbone."""
