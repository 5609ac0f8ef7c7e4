"""Vocal-tract segmentation toolkit: volume I/O, preprocessing, augmentation,
STAPLE consensus, segmentation metrics, reporting and small numpy networks."""

from .nrrd import read_nrrd, write_nrrd
from .volume import LabelMap, RaterStack, Volume, VolumeMeta

__version__ = "0.1.0"

__all__ = ["Volume", "LabelMap", "VolumeMeta", "RaterStack", "read_nrrd", "write_nrrd",
           "__version__"]
