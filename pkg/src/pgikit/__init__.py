"""Point clouds to regular point geometry images (PGIs) and back."""

from .embedder import EmbedderParams, Embedding2D, embed, embed_cloud, init_params, repulsion_loss
from .fitter import FitConfig, FitReport, encode, fit_batch, fit_off_io, fit_on_io, jo_hook, reconstruction_hook
from .geometry import PointCloud, chamfer, hausdorff, knn, normalize, read_cloud, sample_synthetic
from .pgi import Pgi, decode, load_pgi, save_pgi
from .resampler import hard_resample, make_grid, soft_resample

__version__ = "0.1.0"
