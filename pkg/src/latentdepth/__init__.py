"""Multi-view depth refinement through a compact latent code per view."""

from .codec import DepthMap, TransformedDepth, decode as decode_depth, encode as encode_depth
from .covisibility import build_voxel_map, select_covisible
from .decoder import ShapeBasis, coarse_grid_basis, fit_basis, load_basis, save_basis
from .geometry import Intrinsics, PosedView, RigidTransform
from .optimizer import DivergenceError, RefineConfig, refine_codes

__version__ = "0.1.0"
