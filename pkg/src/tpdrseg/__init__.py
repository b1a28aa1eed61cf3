"""Text-prompted lesion segmentation with explicit vision-language priors."""

__version__ = "0.1.0"
