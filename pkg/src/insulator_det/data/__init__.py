"""Annotation ingestion, rasterization, augmentation, synthetic data and XML export."""

from .augment import AugmentationConfig, hflip_record, multi_scale_resize, pad_to_multiple
from .labelme import parse_labelme, to_labelme
from .raster import polygon_to_mask
from .records import CLASS_NAMES, DEFECT, INSULATOR, AnnotationError, DatasetRecord, Instance
from .synth import load_split, synth_generate, synth_record, write_dataset
from .voc import export_voc_xml, parse_voc_xml

__all__ = [
    "AnnotationError", "AugmentationConfig", "CLASS_NAMES", "DEFECT", "DatasetRecord", "INSULATOR",
    "Instance", "export_voc_xml", "hflip_record", "load_split", "multi_scale_resize", "pad_to_multiple",
    "parse_labelme", "parse_voc_xml", "polygon_to_mask", "synth_generate", "synth_record", "to_labelme",
    "write_dataset",
]
