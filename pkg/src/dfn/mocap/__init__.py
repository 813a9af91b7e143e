from .bvh import (BVHParseError, RawClip, clip_local_quats, clip_world_positions, parse_bvh,
                  read_bvh, resample, write_bvh)
from .features import (FeatureError, GlobalTransform, NormStats, compute_norm_stats,
                       extract_features, read_dfnf, reconstruct_global, write_dfnf)

__all__ = [
    "BVHParseError", "RawClip", "clip_local_quats", "clip_world_positions", "parse_bvh",
    "read_bvh", "resample", "write_bvh",
    "FeatureError", "GlobalTransform", "NormStats", "compute_norm_stats",
    "extract_features", "read_dfnf", "reconstruct_global", "write_dfnf",
]
