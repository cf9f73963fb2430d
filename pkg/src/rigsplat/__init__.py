"""Three-camera rig reconstruction: calibration, sync, SfM, splatting."""

__version__ = "0.1.0"
