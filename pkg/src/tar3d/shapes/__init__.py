from .dataset import Dataset, Record, build_dataset, load_manifest
from .sampling import PointCloudSample, QuerySet, sample_query_points, sample_surface
from .sdf import (
    CLASS_BOX,
    CLASS_NAMES,
    CLASS_SPHERE,
    CLASS_TORUS,
    CLASS_UNION,
    Member,
    ShapeSpec,
    occupancy_labels,
    random_spec,
    sdf_eval,
    sdf_values,
    surface_normals,
)
