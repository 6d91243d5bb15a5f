"""Time-offset and extrinsic calibration of two event cameras from a shared moving object."""
from .camera import CameraModel, davis346
from .errors import (
    CheiralityError,
    ConfigError,
    DegeneracyError,
    EventFileError,
    EvsyncError,
    GeometryError,
    InsufficientDataError,
    NoOverlapError,
    OffsetOutOfRangeError,
)
from .events import EventStream, apply_offset, denoise_radius, load_events, save_events, undistort_events
from .geometry import (
    RigidExtrinsics,
    compose_fundamental,
    decompose_to_extrinsics,
    estimate_fundamental_lmeds,
    triangulate,
    umeyama_align,
)
from .pipeline import EvaluationReport, PreprocessConfig, evaluate, preprocess
from .simulator import GroundTruth, ScenarioConfig, make_scenario
from .sync import SearchConfig, SyncResult, sync_known_extrinsics, sync_unknown_extrinsics
from .trajectory import Trajectory2D, extract_centroids, sample

__version__ = "0.1.0"
