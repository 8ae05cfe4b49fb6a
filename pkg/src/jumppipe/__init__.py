"""jumppipe: volleyball jump detection and height estimation from waist-worn
IMU time series — MS-TCN segmentation plus classical height regression."""

__version__ = "0.1.0"
