"""Classical (non-learning) segmentation of ultrasound slices."""
from .morph import ChanVeseParams, flood_fill, morph_chan_vese, morph_contrast_enhance
from .pipeline import FrameSegmentation, SegmentConfig, segment_frame, segment_stack, segment_stack_with_log
from .snake import SnakeParams, active_contour, evolve_snake

__all__ = ["ChanVeseParams", "flood_fill", "morph_chan_vese", "morph_contrast_enhance", "FrameSegmentation",
           "SegmentConfig", "segment_frame", "segment_stack", "segment_stack_with_log", "SnakeParams",
           "active_contour", "evolve_snake"]
