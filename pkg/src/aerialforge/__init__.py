"""aerialforge: build referring-expression segmentation datasets from aerial
instance/semantic segmentation sources."""

__version__ = "0.1.0"
