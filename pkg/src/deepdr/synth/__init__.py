from .dataset_io import DataFormatError, read_dataset, read_flo, write_dataset, write_flo
from .masks import photometric_occlusion, sample_object_mask
from .render import Box, SceneSpec, exact_occlusion, random_scene, render_sequence

__all__ = ["DataFormatError", "read_dataset", "read_flo", "write_dataset", "write_flo",
           "photometric_occlusion", "sample_object_mask", "Box", "SceneSpec", "exact_occlusion",
           "random_scene", "render_sequence"]
