"""hsigen: text-controlled generation of physically plausible human-scene
interactions in synthetic primitive scenes."""

__version__ = "0.1.0"
