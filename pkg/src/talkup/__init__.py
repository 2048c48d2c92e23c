"""Audio-visual talking-face upsampling and low-bandwidth video coding."""

__version__ = "0.1.0"
